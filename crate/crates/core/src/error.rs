use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter store does not match the architecture: {0}")]
    ParamMismatch(String),
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite loss {loss} at step {step}\n{diagnostic}")]
    NonFiniteLoss {
        step: usize,
        loss: f64,
        diagnostic: String,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
