use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("config error: `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}:{line}: {message}")]
    Data {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("variant {variant} is incompatible with this corpus: {reason}")]
    IncompatibleCorpus { variant: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("interpolation requires reconstruction-trained model")]
    NotAutoencoder,

    #[error("missing run artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("training failed: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Process exit code: 2 configuration, 3 data, 4 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::IncompatibleCorpus { .. } | Error::InvalidArgument(_) => 2,
            Error::Data { .. } | Error::EmptyCorpus => 3,
            _ => 4,
        }
    }
}
