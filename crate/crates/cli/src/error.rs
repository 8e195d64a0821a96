use thiserror::Error;

/// Failures of a run, each mapped to a process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] quadwit::Error),

    #[error("acceptance criteria failed: {0:?}")]
    VerificationFailed(Vec<u8>),
}

impl CliError {
    /// `3` for numerical non-convergence, `1` for failed acceptance criteria,
    /// `2` for everything caused by inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_non_convergence() => 3,
            CliError::VerificationFailed(_) => 1,
            _ => 2,
        }
    }
}
