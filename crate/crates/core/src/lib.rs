//! Non-classicality tests for phase-space distributions from homodyne
//! quadrature data.
//!
//! Two procedures are provided and can be compared on equal measurement
//! budgets: the elementary polynomial test ([`elementary`]) and the filtered
//! back-projection estimate of a disc-filtered phase-space average
//! ([`backprojection`]). Analytic state models live in [`phase_space`] and
//! simulated homodyne data in [`sampler`].

pub mod backprojection;
pub mod elementary;
pub mod error;
pub mod io;
pub mod phase_space;
pub mod quadrature;
pub mod sampler;
pub mod verify;

pub use backprojection::{Comparison, FilterSpec, FiniteCutEstimate, FiniteCutPlan, KernelSpec, MCEstimate};
pub use elementary::{ConstraintStrategy, DerivedCoeffs, ElementaryTestSpec, TestCoefficients, TestOutcome};
pub use error::{Error, Result};
pub use phase_space::{BaseDensity, Marginal, PhasePoint, StateKind, StateModel};
pub use sampler::{CutDistribution, CutPlan, CutSamples, JointSampleStream, QuadratureDataset};
