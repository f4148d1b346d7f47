//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SebotError>;

#[derive(Error, Debug)]
pub enum SebotError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operation preconditions not met (e.g. merging non-siblings, dropping
    /// the root, brute-force enumeration on an oversized graph).
    #[error("rejected operation: {0}")]
    Rejected(String),

    #[error("infeasible generator spec: {0}")]
    Infeasible(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("malformed dataset file {file}: line {line}: {msg}")]
    DatasetFormat {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint incompatible: {0}")]
    CheckpointMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SebotError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SebotError::Io {
            path: path.into(),
            source,
        }
    }
}
