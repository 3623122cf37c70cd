use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LotError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LotError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical error in example {example}: {message}")]
    Numerical { example: usize, message: String },

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: schema error: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("missing prerequisite: {0}")]
    Missing(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("tensor `{name}` has shape {found:?}, architecture requires {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl LotError {
    pub fn config(msg: impl Into<String>) -> Self {
        LotError::Config(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        LotError::Argument(msg.into())
    }

    pub fn numerical(example: usize, msg: impl Into<String>) -> Self {
        LotError::Numerical {
            example,
            message: msg.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        LotError::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            LotError::Config(_) | LotError::Argument(_) | LotError::Missing(_) => 1,
            LotError::Numerical { .. } => 3,
            LotError::Malformed { .. }
            | LotError::Schema { .. }
            | LotError::Checkpoint(_)
            | LotError::Io { .. }
            | LotError::Json(_) => 2,
        }
    }
}
