//! Synthetic scenes whose action is visible only in a body part's motion,
//! mask corruption, and the on-disk dataset format.

mod corrupt;
mod generate;
mod io;

pub use corrupt::{corrupt_masks, CorruptionSpec};
pub use generate::{generate_dataset, generate_scene, SceneSpec, ShapeKind};
pub use io::{
    read_dataset, read_f32_payload, read_predictions, read_regions, write_dataset, write_f32_payload,
    write_predictions, write_regions, Dataset, FORMAT_VERSION, MANIFEST,
    PREDICTIONS_MANIFEST,
};
