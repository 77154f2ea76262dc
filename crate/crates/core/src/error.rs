use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimensionMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty vector")]
    EmptyVector,

    #[error("not a probability distribution: {0}")]
    NotADistribution(String),

    #[error("zero-magnitude vector: {0}")]
    ZeroMagnitude(String),

    #[error("zero probability at supported target index {0}")]
    ZeroProbability(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic number {found} in {path}, expected {expected}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("truncated IDX file {path}: need {needed} bytes, have {actual}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        actual: usize,
    },

    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("missing baseline: {0}")]
    MissingBaseline(String),

    #[error("missing metrics file {0}")]
    MissingMetrics(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    /// Stable machine-parsable category, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NonFinite(_) => "non-finite",
            Error::EmptyVector => "empty-vector",
            Error::NotADistribution(_) => "not-a-distribution",
            Error::ZeroMagnitude(_) => "zero-magnitude",
            Error::ZeroProbability(_) => "zero-probability",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::BadMagic { .. } => "bad-magic",
            Error::Truncated { .. } => "truncated-file",
            Error::CountMismatch { .. } => "count-mismatch",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::Checkpoint(_) => "bad-checkpoint",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::MissingBaseline(_) => "missing-baseline",
            Error::MissingMetrics(_) => "missing-metrics",
            Error::Io { .. } => "io",
        }
    }

    /// 2 for usage and precondition failures, 1 for everything that went
    /// wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::MissingBaseline(_) | Error::InvalidArgument(_) => 2,
            _ => 1,
        }
    }
}
