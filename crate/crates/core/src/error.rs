use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SpclError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SpclError {
    #[error("invalid box [{x0}, {y0}, {x1}, {y1}]: need x0 < x1 and y0 < y1")]
    InvalidBox { x0: f64, y0: f64, x1: f64, y1: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("infeasible labeling: {0}")]
    InfeasibleLabels(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("negative loss {0} passed to the weight solver")]
    NegativeLoss(f64),

    #[error("bag `{0}` is weakly labeled but has no hypotheses")]
    EmptyBag(String),

    #[error("easy bag `{0}` has no saliency box")]
    MissingSaliency(String),

    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),

    #[error("dataset has no bags")]
    EmptyDataset,

    #[error("no ground-truth objects available")]
    NoGroundTruth,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
