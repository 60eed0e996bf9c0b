use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value {value} at coordinate {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("aggregation over an empty sign matrix")]
    EmptyMatrix,

    #[error("sign entries must be -1 or +1, found {0}")]
    InvalidSign(i64),

    #[error("trim level k={k} violates k < |S|/2 for |S|={rows}")]
    TrimTooLarge { k: usize, rows: usize },

    #[error("gradient set is empty")]
    EmptyGradientSet,

    #[error("flip mechanism requires beta > 0")]
    FlipRequiresPrivacy,

    #[error("client {client} out of range for {clients} clients")]
    ClientOutOfRange { client: usize, clients: usize },

    #[error("client {0} has an empty data shard")]
    EmptyShard(usize),

    #[error("cannot split {samples} samples across {clients} clients")]
    TooFewSamples { samples: usize, clients: usize },

    #[error("fault budget tau={tau} exceeds client count {clients}")]
    TauExceedsClients { tau: usize, clients: usize },

    #[error("bound not computable: {0}")]
    BoundUnavailable(String),

    #[error("{0}")]
    Idx(#[from] IdxError),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while decoding an IDX file. Each malformation has its own variant.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdxError {
    #[error("file shorter than the {needed}-byte header")]
    HeaderTruncated { needed: usize },

    #[error("unsupported magic number {0:#010x}")]
    BadMagic(u32),

    #[error("payload shorter than declared: expected {expected} bytes, found {actual}")]
    PayloadTruncated { expected: usize, actual: usize },

    #[error("declared dimensions overflow the addressable size")]
    DimensionOverflow,

    #[error("trailing bytes after declared payload: {0}")]
    TrailingBytes(usize),
}
