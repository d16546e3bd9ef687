use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: graph has no edges")]
    EmptyGraph { path: PathBuf },

    #[error("{path}:{line}: unknown node id `{id}`")]
    UnknownNode {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("cannot sample from an empty {0}")]
    EmptyDistribution(&'static str),

    #[error("noise distribution has no category other than the excluded index {0}")]
    DegenerateNoise(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient at iteration {iter} ({branch} branch, node {node})")]
    NonFinite {
        iter: u64,
        branch: &'static str,
        node: usize,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("K={k} out of range (must be in 1..={max})")]
    KOutOfRange { k: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
