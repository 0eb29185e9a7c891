use thiserror::Error;

use crate::gamp::GampState;

/// Errors raised by operators, denoisers, generators and the solver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// A non-finite iterate appeared at `iteration`; `last_state` is the last
    /// state whose entries were all finite.
    #[error("solver diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_state: Box<GampState>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
