use thiserror::Error;

use crate::solvers::Solution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-positive entry in {what} at index {index}: {value}")]
    NonPositiveEntry {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("marginal masses are not balanced: relative spread {spread:e} (masses {masses:?})")]
    MassImbalance { masses: Vec<f64>, spread: f64 },

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("right-hand side is not in the range of the linearization: {0}")]
    NotInRange(String),

    #[error("dense assembly of size {size} exceeds cap {cap}")]
    SizeCapExceeded { size: usize, cap: usize },

    #[error("solver did not converge after {} iterations (residual {:e})", .0.report.iterations, .0.report.final_residual())]
    NotConverged(Box<Solution>),

    #[error("line search failed at iteration {iteration}: residual {residual:e}, last trial step {step:e}")]
    LineSearchFailed {
        iteration: usize,
        residual: f64,
        step: f64,
    },

    #[error("requested mass {mass} is outside the band [{lower}, {upper}]")]
    BandInfeasible { mass: f64, lower: f64, upper: f64 },

    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by invalid input data (as opposed to
    /// numerical failures of a solve).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ShapeMismatch(_)
                | Error::LengthMismatch { .. }
                | Error::NonPositiveEntry { .. }
                | Error::NonFinite { .. }
                | Error::MassImbalance { .. }
                | Error::BandInfeasible { .. }
                | Error::InvalidConfig(_)
                | Error::Parse(_)
                | Error::Schema(_)
                | Error::Io(_)
        )
    }
}
