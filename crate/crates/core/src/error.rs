use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called before a forward pass was recorded")]
    NoForward,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Validation { path: PathBuf, message: String },

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("no embedding for headline {0:?}")]
    MissingEmbedding(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for this error: 2 for bad inputs, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::NonFinite(_) | Error::NoForward => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
