//! The segmentation network, its configuration, published presets and
//! checkpoint files.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{Checkpoint, HistorySummary, OptimizerSettings, CHECKPOINT_VERSION};
pub use config::{
    next_multiple, ModelConfig, Preset, PresetValues, ReferenceScores, ReferenceTiming, Regularizer,
};
pub use model::{ConvBlock, ForwardTrace, Unet};
