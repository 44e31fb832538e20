use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A Kraus branch with (numerically) zero probability was selected. The
    /// caller must not renormalize such a state.
    #[error("zero-probability branch (weight {weight:e})")]
    ZeroProbabilityBranch { weight: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
