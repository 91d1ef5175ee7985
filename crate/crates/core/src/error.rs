use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("class {0} has no examples")]
    EmptyClass(usize),

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical divergence at iteration {iteration}: {reason}")]
    NumericalDivergence { iteration: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
