use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("block size mismatch: {0} vs {1}")]
    BlockSizeMismatch(usize, usize),

    #[error("frame {width}x{height} is smaller than one {block_size}x{block_size} block")]
    FrameTooSmall {
        width: usize,
        height: usize,
        block_size: usize,
    },

    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("geometry changed mid-sequence at frame {index}: {width}x{height}")]
    GeometryChange {
        index: usize,
        width: usize,
        height: usize,
    },

    #[error("stream has no key frame before frame {0}")]
    MissingKeyFrame(usize),

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u8),

    #[error("stream truncated in {section}")]
    Truncated { section: String },

    #[error("malformed stream: {0}")]
    Malformed(String),

    #[error("plan for frame {frame} block {block} disagrees with transmitted count ({expected} vs {actual})")]
    PlanMismatch {
        frame: usize,
        block: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite sample produced by {0}")]
    NonFinite(String),

    #[error("plugin failure: {0}")]
    Plugin(String),

    #[error("empty input: {0}")]
    EmptyInput(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
