use thiserror::Error;

use crate::data::SampleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("sample {0} is already labeled")]
    AlreadyLabeled(SampleId),

    #[error("unknown sample id {0}")]
    UnknownId(SampleId),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("no negative samples available for triplet construction")]
    EmptyNegativePool,

    #[error("labeled reference pool is empty")]
    EmptyLabeledPool,

    #[error("binarization budget floor(w * {pool}) is zero for w = {w}")]
    ZeroBudget { w: f64, pool: usize },

    #[error("labeled set contains only one class")]
    SingleClass,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("unlabeled pool is empty")]
    EmptyPool,

    #[error("query history is empty")]
    EmptyHistory,

    #[error("oracle did not answer within {0} seconds")]
    OracleTimeout(u64),

    #[error("sample {0} is not pending annotation")]
    NotPending(SampleId),

    #[error("invalid class label {0:?}")]
    BadLabel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// An I/O failure tagged with the path involved.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
