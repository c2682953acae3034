use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed sequence `{seq}` at event {index}: {reason}")]
    MalformedSequence { seq: String, index: usize, reason: String },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
