use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong while loading data, training or evaluating.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    MalformedRow { line: u64, msg: String },

    #[error("flow {flow_id:?}: {msg}")]
    InvalidFlow { flow_id: String, msg: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradient tape: {0}")]
    Tape(String),

    #[error("corrupt checkpoint at byte offset {offset}: {msg}")]
    CorruptCheckpoint { offset: u64, msg: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("unknown attack type {requested:?}; available: {available}")]
    UnknownAttackType { requested: String, available: String },

    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
