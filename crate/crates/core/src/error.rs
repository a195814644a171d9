use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}:{line}: {message} (byte offset {offset})")]
    Parse {
        path: PathBuf,
        line: usize,
        offset: u64,
        message: String,
    },

    #[error("{path}:{line}: page failed validation: {violations}")]
    InvalidPage {
        path: PathBuf,
        line: usize,
        violations: String,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("sequence of length {len} exceeds model capacity {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
