//! Reverse-mode automatic differentiation over dense row-major tensors, with
//! fused kernels for the convolution, normalization and attention layers of
//! NCHW image networks.

mod float;
pub mod gradcheck;
mod kernels;
mod ops;
mod tensor;

pub use float::Float;
pub use tensor::{grad_enabled, no_grad, Gradients, Parameter, Tensor};
