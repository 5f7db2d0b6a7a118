//! Coarse-to-fine diffusion Transformer for image restoration.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod restore;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod trainer;

pub use c2f_autograd as autograd;
pub use error::{Error, Result};
