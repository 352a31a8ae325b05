use thiserror::Error;

use crate::qp::QpStatus;

/// Errors raised by model construction, problem building and solving.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("inertia matrix is not positive definite at q = {0:?}")]
    SingularInertia(Vec<f64>),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("step index {index} outside horizon of {horizon} steps")]
    StepOutOfRange { index: usize, horizon: usize },

    #[error("qp solution is not usable (status: {0})")]
    Unsolved(QpStatus),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}
