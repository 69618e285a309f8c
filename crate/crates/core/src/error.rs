use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `context` carries the file and, when known, line/column.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    /// Input parsed but violates an invariant. `field` is a dotted path into the document.
    #[error("invalid value at `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("no free pose found in region `{region}` after {attempts} attempts")]
    SpawnExhausted { region: String, attempts: usize },

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("environment protocol violation: {0}")]
    Protocol(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("replay buffer holds {available} transitions, {requested} requested")]
    InsufficientData { available: usize, requested: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
