//! Diffusion Transformer blocks: channel self-attention (DFSA) and the
//! feed-forward network (DFN), each conditioned on the timestep embedding.

use c2f_autograd::{Float, Parameter, Tensor};
use rand::Rng;

use super::layers::{l2_normalize_last, ChannelLayerNorm, Depthwise3x3, Linear, Pointwise};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Transformer-style sinusoidal encoding of integer timesteps, `(B, dim)`.
///
/// The first half holds sines and the second half cosines, with frequencies
/// `10000^(-i / (dim/2))`.
pub fn sinusoidal_embedding<T: Float>(ts: &[usize], dim: usize) -> Result<Tensor<T>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid(format!("embedding width {dim} must be even and positive")));
    }
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let t = t as f64;
        let freq = |i: usize| (-(10000f64.ln()) * i as f64 / half as f64).exp();
        data.extend((0..half).map(|i| (t * freq(i)).sin()));
        data.extend((0..half).map(|i| (t * freq(i)).cos()));
    }
    Ok(Tensor::from_f64(&data, &[ts.len(), dim]))
}

/// Learned projections of the sinusoidal base for one level of the U-Net:
/// `3C` wide for the attention input and `C` wide for the feed-forward input.
#[derive(Debug, Clone)]
pub struct TimeProjection<T: Float> {
    attn: Linear<T>,
    ffn: Linear<T>,
    width: usize,
}

impl<T: Float> TimeProjection<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, base_dim: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            attn: Linear::new(store, &format!("{name}.attn"), base_dim, 3 * width, rng)?,
            ffn: Linear::new(store, &format!("{name}.ffn"), base_dim, width, rng)?,
            width,
        })
    }

    /// `(B, base) -> ((B, 3C, 1, 1), (B, C, 1, 1))`.
    pub fn forward(&self, base: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let b = base.dim(0);
        let attn = self.attn.forward(base).reshape(&[b, 3 * self.width, 1, 1]);
        let ffn = self.ffn.forward(base).reshape(&[b, self.width, 1, 1]);
        (attn, ffn)
    }
}

fn check_features<T: Float>(f: &Tensor<T>, channels: usize) -> Result<()> {
    if f.rank() != 4 || f.dim(1) != channels {
        return Err(Error::Shape(format!(
            "expected (B, {channels}, H, W) features, got {:?}",
            f.shape()
        )));
    }
    Ok(())
}

fn check_embedding<T: Float>(temb: Option<&Tensor<T>>, batch: usize, width: usize) -> Result<()> {
    match temb {
        Some(t) if t.shape() != [batch, width, 1, 1] => Err(Error::Shape(format!(
            "time embedding {:?} for batch {batch} and width {width}",
            t.shape()
        ))),
        _ => Ok(()),
    }
}

/// Channel (transposed) self-attention with the time embedding added to the
/// fused Q/K/V features before they are split.
#[derive(Debug, Clone)]
pub struct DiffusionSelfAttention<T: Float> {
    norm: ChannelLayerNorm<T>,
    qkv: Pointwise<T>,
    qkv_dw: Depthwise3x3<T>,
    temperature: Parameter<T>,
    project_out: Pointwise<T>,
    channels: usize,
    heads: usize,
}

impl<T: Float> DiffusionSelfAttention<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::invalid(format!(
                "{name}: {channels} channels not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            norm: ChannelLayerNorm::new(store, &format!("{name}.norm"), channels)?,
            qkv: Pointwise::new(store, &format!("{name}.qkv"), channels, 3 * channels, rng)?,
            qkv_dw: Depthwise3x3::new(store, &format!("{name}.qkv_dw"), 3 * channels, rng)?,
            temperature: store.constant(format!("{name}.temperature"), &[heads], 1.0)?,
            project_out: Pointwise::new(store, &format!("{name}.project_out"), channels, channels, rng)?,
            channels,
            heads,
        })
    }

    /// Returns the block output and the `(B, heads, C/h, C/h)` attention matrix.
    pub fn forward_with_attention(&self, f: &Tensor<T>, temb: Option<&Tensor<T>>) -> Result<(Tensor<T>, Tensor<T>)> {
        check_features(f, self.channels)?;
        let (b, c, h, w) = f.dims4();
        check_embedding(temb, b, 3 * c)?;
        let mut qkv = self.qkv_dw.forward(&self.qkv.forward(&self.norm.forward(f)));
        if let Some(temb) = temb {
            qkv = qkv + temb;
        }
        let ch = c / self.heads;
        let split = |i: usize| qkv.narrow(1, i * c, c).reshape(&[b, self.heads, ch, h * w]);
        let q = l2_normalize_last(&split(0));
        let k = l2_normalize_last(&split(1));
        let v = split(2);
        let temperature = self.temperature.tensor().reshape(&[self.heads, 1, 1]);
        let attn = (k.matmul_t(&q, false, true) / temperature).softmax_last();
        let out = attn.matmul(&v).reshape(&[b, c, h, w]);
        Ok((self.project_out.forward(&out) + f, attn))
    }

    pub fn forward(&self, f: &Tensor<T>, temb: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        Ok(self.forward_with_attention(f, temb)?.0)
    }
}

/// `W_p · GELU(W_p(LN(F) + T)) + F` with a 4× hidden expansion by default.
#[derive(Debug, Clone)]
pub struct DiffusionFeedForward<T: Float> {
    norm: ChannelLayerNorm<T>,
    expand: Pointwise<T>,
    contract: Pointwise<T>,
    channels: usize,
}

impl<T: Float> DiffusionFeedForward<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize, expansion: usize, rng: &mut impl Rng) -> Result<Self> {
        let hidden = channels * expansion;
        Ok(Self {
            norm: ChannelLayerNorm::new(store, &format!("{name}.norm"), channels)?,
            expand: Pointwise::new(store, &format!("{name}.expand"), channels, hidden, rng)?,
            contract: Pointwise::new(store, &format!("{name}.contract"), hidden, channels, rng)?,
            channels,
        })
    }

    pub fn forward(&self, f: &Tensor<T>, temb: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        check_features(f, self.channels)?;
        check_embedding(temb, f.dim(0), self.channels)?;
        let mut x = self.norm.forward(f);
        if let Some(temb) = temb {
            x = x + temb;
        }
        let hidden = self.expand.forward(&x).gelu();
        Ok(self.contract.forward(&hidden) + f)
    }
}

#[derive(Debug, Clone)]
pub struct TransformerBlock<T: Float> {
    pub attn: DiffusionSelfAttention<T>,
    pub ffn: DiffusionFeedForward<T>,
}

/// One U-Net level: a stack of blocks sharing a time projection.
#[derive(Debug, Clone)]
pub struct Stage<T: Float> {
    blocks: Vec<TransformerBlock<T>>,
    time: Option<TimeProjection<T>>,
}

impl<T: Float> Stage<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        depth: usize,
        heads: usize,
        expansion: usize,
        time_dim: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(depth);
        for i in 0..depth {
            blocks.push(TransformerBlock {
                attn: DiffusionSelfAttention::new(store, &format!("{name}.block{i}.attn"), channels, heads, rng)?,
                ffn: DiffusionFeedForward::new(store, &format!("{name}.block{i}.ffn"), channels, expansion, rng)?,
            });
        }
        let time = match time_dim {
            Some(d) => Some(TimeProjection::new(store, &format!("{name}.time"), d, channels, rng)?),
            None => None,
        };
        Ok(Self { blocks, time })
    }

    pub fn forward(&self, x: &Tensor<T>, base: &Tensor<T>, mut probe: Option<&mut Vec<Tensor<T>>>) -> Result<Tensor<T>> {
        let (t_attn, t_ffn) = match &self.time {
            Some(p) => {
                let (a, f) = p.forward(base);
                (Some(a), Some(f))
            }
            None => (None, None),
        };
        let mut x = x.clone();
        for block in &self.blocks {
            let (y, attn) = block.attn.forward_with_attention(&x, t_attn.as_ref())?;
            if let Some(p) = probe.as_deref_mut() {
                p.push(attn);
            }
            x = block.ffn.forward(&y, t_ffn.as_ref())?;
        }
        Ok(x)
    }
}
