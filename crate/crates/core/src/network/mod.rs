//! The K-stage hourglass network, its configuration and checkpoints.

pub mod checkpoint;
mod config;
mod model;

pub use checkpoint::{fnv1a64, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{mirrored_widths, ModelConfig, StageShape};
pub use model::DenoMambaModel;
