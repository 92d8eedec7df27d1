use thiserror::Error;

/// Errors raised by the localization library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("descriptor dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("map has no edge {from} -> {to}")]
    MissingEdge { from: usize, to: usize },

    #[error("measurement degeneracy{}: every state has zero likelihood",
            .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    DegenerateMeasurement { step: Option<usize> },

    #[error("ground-truth poses missing on {0}")]
    MissingGroundTruth(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
