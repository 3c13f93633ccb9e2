//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any module of this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Normalization refused: the vector norm is at or below the cutoff.
    #[error("cannot normalize vector: norm {norm:.3e} <= {eps:.0e}")]
    ZeroVector { norm: f64, eps: f64 },

    /// Two vectors or matrix columns disagree in dimension.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// A tensor or feature map does not have the shape the operation requires.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A binary container does not start with the expected magic bytes.
    #[error("bad magic bytes in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: String,
        expected: [u8; 4],
        found: [u8; 4],
    },

    /// A binary container header is inconsistent with the payload.
    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Partitioning asked for more stripes than the extent allows.
    #[error("cannot split extent {extent} into {parts} stripes")]
    TooManyParts { extent: usize, parts: usize },

    /// A backward pass was given a cache recorded under different parameter shapes.
    #[error("stale cache: {0}")]
    StaleCache(String),

    /// A batch is unusable for mining (an anchor lacks a positive or negative).
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("index {index} out of range for length {len}")]
    BadIndex { index: usize, len: usize },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// A cluster group unexpectedly has no members.
    #[error("group {0} is empty")]
    EmptyGroup(usize),

    #[error("not enough identities: need {requested}, have {available}")]
    NotEnoughIdentities { requested: usize, available: usize },

    #[error("no query has a valid positive under the protocol")]
    NoValidQueries,

    /// Clustering produced zero groups; the adaptation round cannot proceed.
    #[error("clustering marked every sample as noise")]
    AllNoise,
}

pub type Result<T> = std::result::Result<T, Error>;
