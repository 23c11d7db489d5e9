use thiserror::Error;

/// Errors raised by the optimization toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },

    #[error("rollout failed at perturbation {perturbation}, rollout {rollout}: {reason}")]
    Rollout {
        perturbation: usize,
        rollout: usize,
        reason: String,
    },

    #[error("no reference gradient available for this problem")]
    MissingReference,

    #[error("iterate diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
