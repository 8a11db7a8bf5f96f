use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("label decode failed: {mismatches} pixel(s) do not match any palette color")]
    PaletteMismatch { mismatches: usize },

    #[error("config digest mismatch: checkpoint has {checkpoint}, config has {config}")]
    DigestMismatch { checkpoint: String, config: String },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl ToString) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
