use thiserror::Error;

/// Errors raised by the conveyance library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition (shape, range, invariant).
    #[error("invalid argument: {0}")]
    Argument(String),
    /// The probability-space loss was asked to divide by a zero mass.
    #[error("domain error: {0}")]
    Domain(String),
    /// A text or structured document failed to parse.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
