use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, channel layout).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Inconsistent configuration (unknown keys, bad weights, missing teacher).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but is not in the expected format.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    /// Itemized failures from a directory ingestion or batch load.
    #[error("{} sample(s) failed to load:\n{}", .0.len(), .0.join("\n"))]
    Ingest(Vec<String>),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }
}
