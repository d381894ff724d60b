use std::path::PathBuf;

use cafv_autodiff::AutodiffError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Csv { path: PathBuf, line: usize, message: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: truncated file, needed at least {expected} bytes but found {actual}")]
    Truncated { path: PathBuf, expected: u64, actual: u64 },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("context interval {delta} is not in the interval set {allowed:?}")]
    ContextNotAllowed { delta: i32, allowed: Vec<i32> },

    #[error("label {label} is not one of {labels:?}")]
    UnknownLabel { label: i32, labels: Vec<i32> },

    #[error("{0}")]
    Dimension(String),

    #[error("no admissible source class for target {target} within intervals {intervals:?}")]
    NoAdmissibleSource { target: i32, intervals: Vec<i32> },

    #[error("no class pair realizes any interval in {0:?}")]
    NoRealizablePair(Vec<i32>),

    #[error("non-finite loss at generator step {step}: {breakdown}")]
    NonFiniteLoss { step: u64, breakdown: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
