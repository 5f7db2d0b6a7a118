//! The diffusion Transformer noise predictor.

mod blocks;
mod layers;
mod model;
mod params;

pub use blocks::{
    sinusoidal_embedding, DiffusionFeedForward, DiffusionSelfAttention, Stage, TimeProjection,
    TransformerBlock,
};
pub use layers::{l2_normalize_last, ChannelLayerNorm, Conv3x3, Depthwise3x3, Linear, Pointwise};
pub use model::{DftConfig, DftModel, LEVELS};
pub use params::ParamStore;
