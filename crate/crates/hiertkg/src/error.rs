//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HierError {
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("schema error: missing column {0}")]
    Schema(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged: {0}")]
    Diagnostics(String),
}

impl HierError {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        HierError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        HierError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HierError>;
