use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points: requested {requested}, cloud has {available}")]
    InsufficientPoints { requested: usize, available: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("front-surface crop is empty")]
    EmptyCrop,

    #[error("insufficient front surface: {available} points, need at least {required}")]
    InsufficientFrontSurface { available: usize, required: usize },

    #[error("boundary regions cover every vertex; cannot place force sites")]
    NoForceSites,

    #[error("coincident points have no pair feature")]
    CoincidentPoints,

    #[error("need at least {required} matches, got {got}")]
    TooFewMatches { required: usize, got: usize },

    #[error("RANSAC failed: best hypothesis has {inliers} inliers")]
    RansacFailed { inliers: usize },

    #[error("non-finite value at graph node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("train/test split leakage: mesh {0} appears in both splits")]
    SplitLeakage(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed PLY: {0}")]
    Ply(String),

    #[error("dataset error at {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InsufficientPoints { .. } => "insufficient_points",
            Error::InvalidInput(_) => "invalid_input",
            Error::Degenerate(_) => "degenerate",
            Error::EmptyCrop => "empty_crop",
            Error::InsufficientFrontSurface { .. } => "insufficient_front_surface",
            Error::NoForceSites => "no_force_sites",
            Error::CoincidentPoints => "coincident_points",
            Error::TooFewMatches { .. } => "too_few_matches",
            Error::RansacFailed { .. } => "ransac_failed",
            Error::NonFinite { .. } => "non_finite",
            Error::Shape(_) => "shape",
            Error::SplitLeakage(_) => "split_leakage",
            Error::CheckpointVersion { .. } => "checkpoint_version",
            Error::Checkpoint(_) => "checkpoint",
            Error::Ply(_) => "ply",
            Error::Dataset { .. } => "dataset",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
