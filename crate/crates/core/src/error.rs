use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} at index ({row}, {col}) is outside [0, 1]")]
    SigmaOutOfRange { row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid {what}: {reason}")]
    InvalidArgument { what: &'static str, reason: String },

    #[error("negative or non-finite {what} at index {index}: {value}")]
    Domain { what: &'static str, index: usize, value: f64 },

    #[error("exhaustive search over {k_users} users exceeds the limit of {max}")]
    Capacity { k_users: usize, max: usize },

    #[error("index {index} out of range for {k_users} users")]
    IndexOutOfRange { index: usize, k_users: usize },

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { what, reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
