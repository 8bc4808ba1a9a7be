//! The spatio-temporal graph transformer: a temporal encoder over each
//! substation's look-back window, adjacency-masked attention across the
//! substations of a day, a static-feature MLP, and a fused classification
//! head trained with a class-weighted focal loss.

mod export;
mod model;
mod params;

pub use export::{write_attention_csv, ATTENTION_HEADER};
pub use model::{
    embed_inputs, focal_loss, spatial_attention, validate_mask, Batch, DayGroup, Forward, LossConfig, StgtModel,
};
pub use params::{Checkpoint, MaskMode, ModelConfig, ModelParams, NamedTensor};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid adjacency mask: {0}")]
    Mask(String),
    #[error("invalid batch: {0}")]
    Batch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
