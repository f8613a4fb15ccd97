use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task parameters: radius {radius}, angle {angle}")]
    InvalidTask { radius: f64, angle: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("episode already terminated")]
    EpisodeDone,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("segment index {index} out of range for pool of {len} segments")]
    SegmentOutOfRange { index: usize, len: usize },

    #[error("token vector has length {got}, expected {expected}")]
    TokenLength { got: usize, expected: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("no demonstration pool for task {task_id} (looked in {path})")]
    MissingPool { task_id: usize, path: PathBuf },

    #[error("ragged records: {0}")]
    Ragged(String),

    #[error("external policy: {0}")]
    External(String),

    #[error("malformed pool file {path}: {msg}")]
    PoolFormat { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
