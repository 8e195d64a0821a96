use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("moment order {order} exceeds the configured maximum {max}")]
    OrderTooLarge { order: usize, max: usize },

    #[error("at least {required} cuts are required, got {got}")]
    InsufficientCuts { required: usize, got: usize },

    #[error("constraint system of order {order} is rank deficient")]
    RankDeficient { order: usize },

    #[error("dataset does not match the test specification: {0}")]
    CutMismatch(String),

    #[error("cut {cut} holds {count} samples, at least 2 are required")]
    InsufficientSamples { cut: usize, count: usize },

    #[error("{0} did not converge")]
    NonConvergence(String),

    #[error("unknown cut distribution `{0}`")]
    UnknownDistribution(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by numerical non-convergence rather than bad inputs.
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NonConvergence(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
