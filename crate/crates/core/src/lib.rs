//! Region-consistent actor-action segmentation.
//!
//! Per-region class scores from an ROI-pooled fully connected head are
//! painted back onto pixels by a max-fusion layer, so every pixel of one
//! instance shares that instance's action label. A per-pixel baseline head,
//! a two-stage trainer, segmentation metrics and a synthetic data generator
//! complete the pipeline.

pub mod error;
pub mod frame;
pub mod frontend;
pub mod fusion;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod region;
pub mod regionhead;
pub mod synthdata;
pub mod taxonomy;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use frame::{validate_frame, FrameSample, LabelMap, Violation};
pub use fusion::{
    joint_labeling, joint_probability, region_to_pixel_backward, region_to_pixel_forward, FusionWitness,
    ProbMap, RegionScores, ScoreMap, Source,
};
pub use metrics::{evaluate_all, EvalOptions, FrameLabels, MetricsReport};
pub use model::{HeadMode, Model, ModelConfig, ModelParams, Prediction, StreamMode};
pub use region::{BBox, RegionMask, RegionSet};
pub use synthdata::{corrupt_masks, generate_scene, read_dataset, write_dataset, CorruptionSpec, Dataset, SceneSpec};
pub use taxonomy::Taxonomy;
pub use tensor::Tensor;
pub use training::{train_two_stage, TrainConfig, TrainingLog};
