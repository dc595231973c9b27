use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FedError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FedError {
    /// Invalid hyperparameters, task descriptions or layer layouts.
    #[error("configuration error: {0}")]
    Config(String),

    /// Dimension mismatch between matrices, vectors or models.
    #[error("shape error: {0}")]
    Shape(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at key `{key}`: {message}")]
    Parse { key: String, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("client {client_id}: {source}")]
    Client {
        client_id: usize,
        #[source]
        source: Box<FedError>,
    },

    /// A held-out dataset was handed to a training code path.
    #[error("isolation violation: {0}")]
    Isolation(String),
}

impl FedError {
    pub(crate) fn parse(key: impl Into<String>, message: impl Into<String>) -> Self {
        FedError::Parse {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FedError::Io {
            path: path.into(),
            source,
        }
    }
}
