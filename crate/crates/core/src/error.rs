use std::path::PathBuf;

use crate::stf::StfError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("singular normal equations; use a ridge penalty lambda > 0")]
    SingularSystem,

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f32 },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Stf(#[from] StfError),

    #[error("malformed {what} in {path}: {detail}")]
    Format {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
