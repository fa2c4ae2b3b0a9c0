use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A layer or model configuration that cannot be built.
    #[error("configuration error in {layer}: {message}")]
    Config { layer: String, message: String },

    #[error("shape mismatch in {op}: {message}")]
    Shape { op: &'static str, message: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Diverged { epoch: usize, batch: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes (expected \"MARC\")")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("entry {name:?}: {message}")]
    Entry { name: String, message: String },
    #[error("missing entry {0:?}")]
    Missing(String),
}

impl CheckpointError {
    /// Stable numeric code, shared with the C interface.
    pub fn code(&self) -> i32 {
        match self {
            CheckpointError::BadMagic => 20,
            CheckpointError::UnsupportedVersion(_) => 21,
            CheckpointError::Truncated(_) => 22,
            CheckpointError::DuplicateName(_) => 23,
            CheckpointError::Entry { .. } => 24,
            CheckpointError::Missing(_) => 25,
        }
    }
}

impl Error {
    pub fn config(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            layer: layer.into(),
            message: message.into(),
        }
    }

    pub fn shape(op: &'static str, message: impl Into<String>) -> Self {
        Error::Shape {
            op,
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for this error class. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Shape { .. } => 3,
            Error::NonFinite { .. } => 4,
            Error::InvalidArgument(_) => 5,
            Error::Parse { .. } => 6,
            Error::Dataset(_) => 7,
            Error::Checkpoint(e) => e.code(),
            Error::Diverged { .. } => 8,
            Error::Io { .. } => 9,
            Error::Json(_) => 10,
        }
    }
}
