use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("encoding collision: vertebrae {first} and {second} map to grid cell ({cx}, {cy})")]
    EncodingCollision {
        first: usize,
        second: usize,
        cx: usize,
        cy: usize,
    },

    #[error("degenerate vertebra{}: left and right midpoints coincide", .index.map(|i| format!(" {i}")).unwrap_or_default())]
    DegenerateVertebra { index: Option<usize> },

    #[error("SMAPE undefined for image {index}: estimated and true angles sum to zero")]
    UndefinedImage { index: usize },

    #[error("non-finite gradient for parameter `{param}`; step aborted")]
    NonFiniteGradient { param: String },

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("sample generation failed: {0}")]
    Generation(String),

    #[error("checkpoint version mismatch: expected {expected}, found `{found}`")]
    CheckpointVersion { expected: u32, found: String },

    #[error("checkpoint truncated: {0}")]
    CheckpointTruncated(String),

    #[error("checkpoint inconsistent: {0}")]
    CheckpointInconsistent(String),

    #[error("malformed {what} in {path}: {reason}")]
    Malformed {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
