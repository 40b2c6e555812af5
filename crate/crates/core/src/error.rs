use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("corrupt mask: {0}")]
    CorruptMask(String),

    #[error("mask format error at {}: {reason}", path.display())]
    MaskFormat { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("backend error ({backend}): {reason}")]
    Backend { backend: String, reason: String },

    #[error("protocol error ({backend}): {reason}")]
    Protocol { backend: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing predictions for {} expression(s): {}", .0.len(), .0.join(", "))]
    MissingPrediction(Vec<String>),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn backend(backend: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Backend {
            backend: backend.into(),
            reason: reason.into(),
        }
    }

    pub fn protocol(backend: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Protocol {
            backend: backend.into(),
            reason: reason.into(),
        }
    }

    /// True for failures that originate in a model backend (crash, timeout,
    /// malformed reply) as opposed to local data or configuration problems.
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, Error::Backend { .. } | Error::Protocol { .. })
    }
}
