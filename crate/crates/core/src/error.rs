use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm embedding has no direction")]
    ZeroVector,

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("anchor {0} has no positives")]
    NoPositives(usize),

    #[error("invalid matching: {0}")]
    InvalidMatching(String),

    #[error("not enough eligible videos: need {needed}, found {available}")]
    InsufficientVideos { needed: usize, available: usize },

    #[error("not enough images: need {needed}, found {available}")]
    InsufficientImages { needed: usize, available: usize },

    #[error("frame {frame} arrived after frame {last}")]
    OutOfOrderFrame { frame: u64, last: u64 },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
