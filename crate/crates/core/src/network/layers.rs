//! Primitive layers over `(B, C, H, W)` tensors.

use c2f_autograd::{Float, Parameter, Tensor};
use rand::Rng;

use super::params::ParamStore;
use crate::error::Result;

const LN_EPS: f64 = 1e-5;
const NORMALIZE_EPS: f64 = 1e-12;

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Dense 3×3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone)]
pub struct Conv3x3<T: Float> {
    weight: Parameter<T>,
    bias: Parameter<T>,
}

impl<T: Float> Conv3x3<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = fan_in_bound(c_in * 9);
        Ok(Self {
            weight: store.uniform(format!("{name}.weight"), &[c_out, c_in, 3, 3], bound, rng)?,
            bias: store.uniform(format!("{name}.bias"), &[c_out], bound, rng)?,
        })
    }

    pub fn zeros(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.constant(format!("{name}.weight"), &[c_out, c_in, 3, 3], 0.0)?,
            bias: store.constant(format!("{name}.bias"), &[c_out], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv3x3(&self.weight.tensor(), &self.bias.tensor())
    }
}

/// 1×1 convolution.
#[derive(Debug, Clone)]
pub struct Pointwise<T: Float> {
    weight: Parameter<T>,
    bias: Parameter<T>,
}

impl<T: Float> Pointwise<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = fan_in_bound(c_in);
        Ok(Self {
            weight: store.uniform(format!("{name}.weight"), &[c_out, c_in, 1, 1], bound, rng)?,
            bias: store.uniform(format!("{name}.bias"), &[c_out], bound, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv1x1(&self.weight.tensor(), &self.bias.tensor())
    }
}

/// Per-channel 3×3 convolution with zero padding.
#[derive(Debug, Clone)]
pub struct Depthwise3x3<T: Float> {
    weight: Parameter<T>,
    bias: Parameter<T>,
}

impl<T: Float> Depthwise3x3<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = fan_in_bound(9);
        Ok(Self {
            weight: store.uniform(format!("{name}.weight"), &[channels, 1, 3, 3], bound, rng)?,
            bias: store.uniform(format!("{name}.bias"), &[channels], bound, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.depthwise3x3(&self.weight.tensor(), &self.bias.tensor())
    }
}

/// Layer normalization across channels at every spatial site.
#[derive(Debug, Clone)]
pub struct ChannelLayerNorm<T: Float> {
    weight: Parameter<T>,
    bias: Parameter<T>,
}

impl<T: Float> ChannelLayerNorm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: store.constant(format!("{name}.weight"), &[channels], 1.0)?,
            bias: store.constant(format!("{name}.bias"), &[channels], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.channel_layer_norm(&self.weight.tensor(), &self.bias.tensor(), LN_EPS)
    }
}

/// Affine map on `(B, in)` rows.
#[derive(Debug, Clone)]
pub struct Linear<T: Float> {
    weight: Parameter<T>,
    bias: Parameter<T>,
}

impl<T: Float> Linear<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = fan_in_bound(d_in);
        Ok(Self {
            weight: store.uniform(format!("{name}.weight"), &[d_out, d_in], bound, rng)?,
            bias: store.uniform(format!("{name}.bias"), &[d_out], bound, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.matmul_t(&self.weight.tensor(), false, true) + self.bias.tensor()
    }
}

/// Unit-normalizes along the last axis.
pub fn l2_normalize_last<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.l2_normalize_last(NORMALIZE_EPS)
}
