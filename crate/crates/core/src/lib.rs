//! Self-paced curriculum learning for weakly supervised object detection.
//!
//! Training alternates between one-vs-all linear detectors, instance labels
//! constrained by image-level tags, and self-paced sample weights whose pace
//! grows until every sample is admitted.

pub mod curriculum;
pub mod error;
pub mod evaldet;
pub mod geometry;
pub mod harness;
pub mod labeler;
pub mod pacer;
pub mod trainer;
pub mod types;
pub mod wsvm;

pub use error::{Result, SpclError};
pub use evaldet::{Detection, MetricReport};
pub use geometry::{iou, nms, BBox};
pub use labeler::LabelMode;
pub use trainer::{detect, train, Ablation, DetectConfig, TrainConfig, TrainState};
pub use types::{
    score, Dataset, DetectorSet, GtObject, Hypothesis, ImageBag, Label, LabelMatrix, LinearDetector, WeightMatrix,
};
