//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by construction, ingestion, indexing and querying.
#[derive(Debug, Error)]
pub enum Error {
    /// Two distributions (or a distribution and a projection) disagree on
    /// the dimensionality of the underlying space.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// A distribution must contain at least one bin.
    #[error("distribution {id} has no bins")]
    EmptyDistribution { id: u64 },

    /// Bin coordinates and weights must line up and be finite.
    #[error("distribution {id}: {reason}")]
    InvalidDistribution { id: u64, reason: String },

    /// Weights summed to something other than 1 and renormalization was
    /// not requested.
    #[error("distribution {id}: weights sum to {sum} (expected 1 within 1e-6; pass renormalize to accept)")]
    WeightSum { id: u64, sum: f64 },

    /// A dataset file could not be parsed. `line` is 1-based.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// Dataset object ids must be unique.
    #[error("duplicate object id {0}")]
    DuplicateId(u64),

    /// A caller-supplied parameter is out of range for the operation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two projected distributions were built against different projection
    /// frames and cannot be compared.
    #[error("projection provenance mismatch: ranges [{0}, {1}] vs [{2}, {3}]")]
    ProvenanceMismatch(f64, f64, f64, f64),

    /// A summary was produced against a different sub-interval grid than
    /// the one supplied.
    #[error("sub-interval grid mismatch: {0}")]
    GridMismatch(String),

    /// An index file failed structural validation.
    #[error("index format error: {0}")]
    IndexFormat(String),

    /// An index failed a verification audit.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error at line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
