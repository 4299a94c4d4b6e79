use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::GatewayError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("unsupported store version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("generated function `{found}` does not match target `{target}`")]
    TargetMismatch { target: String, found: String },

    #[error("memory sequence is empty")]
    EmptySequence,

    #[error("cumulative test set is empty")]
    EmptyTestSet,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("test runner error: {0}")]
    Runner(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
