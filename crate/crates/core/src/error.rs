//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by checkpoint I/O, validation and the numeric operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected \"CKAV\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported container version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("truncated payload: {context}")]
    Truncated { context: String },

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("non-finite value in tensor \"{name}\" at flat index {index}")]
    NonFinite { name: String, index: usize },

    #[error("shape/data length mismatch for tensor: shape {shape:?} implies {expected} elements, data has {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("invalid shape {shape:?}: dimensions must be positive")]
    InvalidShape { shape: Vec<usize> },

    #[error("duplicate tensor name \"{0}\"")]
    DuplicateTensor(String),

    #[error("gradient/param mismatch: {0}")]
    GradParamMismatch(String),

    #[error("incompatible: \"{name}\" missing in checkpoint {index}")]
    MissingTensor { name: String, index: usize },

    #[error(
        "shape mismatch at \"{name}\": checkpoint {index} has {found:?}, expected {expected:?}"
    )]
    ShapeMismatch {
        name: String,
        index: usize,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("empty checkpoint series")]
    EmptySeries,

    #[error("missing dev perplexity in checkpoint metadata at index {index}")]
    MissingDevPpl { index: usize },

    #[error("invalid metadata: {0}")]
    InvalidMeta(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("gradient-step averaging requires stored gradients: checkpoint {index} has none")]
    GradRequired { index: usize },

    #[error("weight optimization requires at least 2 checkpoints, got {0}")]
    TooFewCheckpoints(usize),

    #[error("dataset error: {0}")]
    InvalidDataset(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
