use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KdError>;

#[derive(Debug, Error)]
pub enum KdError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("backward called without a recorded forward pass")]
    NoForward,

    #[error("epoch {epoch} out of range for a schedule of {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error("malformed file at byte offset {offset}: {reason}")]
    MalformedFile { offset: u64, reason: String },

    #[error("enumeration guard exceeded: {sequences} sequences (limit {limit})")]
    EnumerationGuard { sequences: u128, limit: u128 },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("missing teacher checkpoint at {0}")]
    MissingTeacher(PathBuf),

    #[error("class count mismatch: teacher has {teacher}, student has {student}")]
    ClassCountMismatch { teacher: usize, student: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(#[from] serde_json::Error),
}

impl KdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        KdError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KdError::Io {
            path: path.into(),
            source,
        }
    }
}
