use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid conversation {id}: {message}")]
    Validation { id: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sequence of {len} tokens exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward called without a recorded forward pass")]
    NoForward,

    #[error("optimizer step requested before any gradient accumulation")]
    NothingAccumulated,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("template bank error: {0}")]
    TemplateBank(String),

    #[error("metric undefined: {0}")]
    Metric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
