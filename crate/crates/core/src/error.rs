use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate box {index}: {reason}")]
    DegenerateBox { index: usize, reason: String },

    #[error("stale witness: {0}")]
    StaleWitness(String),

    #[error("all pixels are ignored")]
    AllIgnored,

    #[error("non-finite gradient for parameter {name}[{index}]")]
    NonFiniteGradient { name: String, index: usize },

    #[error("placement failed after {attempts} attempts; try fewer or smaller actors")]
    PlacementFailed { attempts: usize },

    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },

    #[error("truncated file {path}: {reason}")]
    Truncated { path: PathBuf, reason: String },

    #[error("missing payload {path}")]
    MissingPayload { path: PathBuf },

    #[error("shape mismatch in payload {path}: expected {expected} bytes, found {actual}")]
    PayloadShapeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("frame count mismatch: {predictions} predictions vs {ground_truths} ground truths")]
    FrameCountMismatch {
        predictions: usize,
        ground_truths: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
