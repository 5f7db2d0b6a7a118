use c2f_autograd::{Float, Tensor};

use super::blocks::{sinusoidal_embedding, Stage};
use super::layers::{Conv3x3, Pointwise};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::rng;

pub const LEVELS: usize = 4;

/// Architecture hyperparameters of the noise-prediction network.
#[derive(Debug, Clone, PartialEq)]
pub struct DftConfig {
    pub base_channels: usize,
    pub channels: [usize; LEVELS],
    pub blocks: [usize; LEVELS],
    pub heads: [usize; LEVELS],
    pub ffn_expansion: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// When false the blocks receive no timestep information at all.
    pub time_embedding: bool,
}

impl Default for DftConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl DftConfig {
    pub fn full() -> Self {
        Self {
            base_channels: 48,
            channels: [48, 96, 192, 384],
            blocks: [4, 6, 6, 8],
            heads: [1, 2, 4, 8],
            ffn_expansion: 4,
            in_channels: 6,
            out_channels: 3,
            time_embedding: true,
        }
    }

    /// Desk-scale preset used by the overfit and ablation harnesses.
    pub fn tiny() -> Self {
        Self {
            base_channels: 16,
            channels: [16, 32, 64, 128],
            blocks: [1, 1, 1, 1],
            ..Self::full()
        }
    }

    /// Width of the shared sinusoidal base embedding.
    pub fn time_dim(&self) -> usize {
        4 * self.base_channels
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let c = self.base_channels;
        if c == 0 || c % 2 != 0 {
            errs.push(format!("model.base_channels = {c}: must be even and positive"));
        }
        for i in 0..LEVELS {
            if self.channels[i] != c << i {
                errs.push(format!(
                    "model.channels[{i}] = {}: must equal base_channels * 2^{i} = {}",
                    self.channels[i],
                    c << i
                ));
            }
            if self.blocks[i] == 0 {
                errs.push(format!("model.blocks[{i}] must be positive"));
            }
            if self.heads[i] == 0 || self.channels[i] % self.heads[i] != 0 {
                errs.push(format!(
                    "model.heads[{i}] = {}: must divide {} channels",
                    self.heads[i], self.channels[i]
                ));
            }
        }
        if self.ffn_expansion == 0 {
            errs.push("model.ffn_expansion must be positive".into());
        }
        if self.in_channels != 2 * self.out_channels || self.out_channels == 0 {
            errs.push(format!(
                "model.in_channels = {} must be twice out_channels = {}",
                self.in_channels, self.out_channels
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// The noise-prediction network `eps_theta(x_t, y, t)`: a 4-level U-shaped
/// stack of diffusion Transformer blocks.
///
/// Encoder levels halve resolution and double width through a 1×1 conv that
/// halves channels followed by pixel-unshuffle; the decoder mirrors this with
/// a channel-doubling 1×1 conv and pixel-shuffle. Skip features are
/// concatenated and fused back by 1×1 convs at levels 2 and 3, while level 1
/// keeps the doubled width. The final 3×3 conv is zero-initialized, so a
/// fresh model returns `x_t` unchanged.
#[derive(Debug, Clone)]
pub struct DftModel<T: Float = f32> {
    config: DftConfig,
    store: ParamStore<T>,
    conv_in: Conv3x3<T>,
    encoders: Vec<Stage<T>>,
    downs: Vec<Pointwise<T>>,
    latent: Stage<T>,
    ups: Vec<Pointwise<T>>,
    fuses: Vec<Pointwise<T>>,
    decoders: Vec<Stage<T>>,
    conv_out: Conv3x3<T>,
}

impl<T: Float> DftModel<T> {
    pub fn new(config: &DftConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let ch = config.channels;
        let exp = config.ffn_expansion;
        let td = config.time_embedding.then(|| config.time_dim());

        let conv_in = Conv3x3::new(s, "conv_in", config.in_channels, ch[0], rng)?;
        let mut encoders = Vec::new();
        let mut downs = Vec::new();
        for i in 0..LEVELS - 1 {
            let name = format!("enc{}", i + 1);
            encoders.push(Stage::new(s, &name, ch[i], config.blocks[i], config.heads[i], exp, td, rng)?);
            downs.push(Pointwise::new(s, &format!("down{}", i + 1), ch[i], ch[i] / 2, rng)?);
        }
        let latent = Stage::new(s, "latent", ch[3], config.blocks[3], config.heads[3], exp, td, rng)?;

        // decoder runs deepest-first; index 0 is level 3
        let mut ups = Vec::new();
        let mut fuses = Vec::new();
        let mut decoders = Vec::new();
        for level in (0..LEVELS - 1).rev() {
            let n = level + 1;
            let from = if level == 2 { ch[3] } else { ch[level + 1] };
            ups.push(Pointwise::new(s, &format!("up{n}"), from, from * 2, rng)?);
            let width = if level == 0 {
                2 * ch[0]
            } else {
                fuses.push(Pointwise::new(s, &format!("fuse{n}"), 2 * ch[level], ch[level], rng)?);
                ch[level]
            };
            decoders.push(Stage::new(
                s,
                &format!("dec{n}"),
                width,
                config.blocks[level],
                config.heads[level],
                exp,
                td,
                rng,
            )?);
        }
        let conv_out = Conv3x3::zeros(s, "conv_out", 2 * ch[0], config.out_channels)?;

        Ok(Self {
            config: config.clone(),
            store,
            conv_in,
            encoders,
            downs,
            latent,
            ups,
            fuses,
            decoders,
            conv_out,
        })
    }

    pub fn config(&self) -> &DftConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_elements()
    }

    fn check_inputs(&self, x_t: &Tensor<T>, y: &Tensor<T>, ts: &[usize]) -> Result<()> {
        if x_t.rank() != 4 {
            return Err(Error::Shape(format!("expected (B, C, H, W) input, got {:?}", x_t.shape())));
        }
        let (b, c, h, w) = x_t.dims4();
        if y.shape() != x_t.shape() {
            return Err(Error::Shape(format!("x_t {:?} vs y {:?}", x_t.shape(), y.shape())));
        }
        if c != self.config.out_channels {
            return Err(Error::Shape(format!("expected {} channels, got {c}", self.config.out_channels)));
        }
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("spatial size {h}x{w} is not a positive multiple of 8")));
        }
        if ts.len() != b {
            return Err(Error::Shape(format!("{} timesteps for batch {b}", ts.len())));
        }
        Ok(())
    }

    /// Predicted noise for `x_t` conditioned on the degraded image `y`.
    pub fn forward(&self, x_t: &Tensor<T>, y: &Tensor<T>, ts: &[usize]) -> Result<Tensor<T>> {
        self.forward_impl(x_t, y, ts, None)
    }

    /// Like [`forward`](Self::forward), also returning every block's
    /// attention matrix in network order.
    pub fn forward_with_attention(
        &self,
        x_t: &Tensor<T>,
        y: &Tensor<T>,
        ts: &[usize],
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut maps = Vec::new();
        let out = self.forward_impl(x_t, y, ts, Some(&mut maps))?;
        Ok((out, maps))
    }

    fn forward_impl(
        &self,
        x_t: &Tensor<T>,
        y: &Tensor<T>,
        ts: &[usize],
        mut probe: Option<&mut Vec<Tensor<T>>>,
    ) -> Result<Tensor<T>> {
        self.check_inputs(x_t, y, ts)?;
        let base = sinusoidal_embedding(ts, self.config.time_dim())?;

        let mut x = self.conv_in.forward(&Tensor::cat(&[x_t, y], 1));
        let mut skips = Vec::with_capacity(LEVELS - 1);
        for (stage, down) in self.encoders.iter().zip(&self.downs) {
            let e = stage.forward(&x, &base, probe.as_deref_mut())?;
            x = down.forward(&e).pixel_unshuffle();
            skips.push(e);
        }
        x = self.latent.forward(&x, &base, probe.as_deref_mut())?;

        let mut fuses = self.fuses.iter();
        for (up, stage) in self.ups.iter().zip(&self.decoders) {
            let skip = skips.pop().expect("one skip per decoder level");
            x = Tensor::cat(&[&up.forward(&x).pixel_shuffle(), &skip], 1);
            if !skips.is_empty() {
                x = fuses.next().expect("fuse conv for levels 2-3").forward(&x);
            }
            x = stage.forward(&x, &base, probe.as_deref_mut())?;
        }
        Ok(self.conv_out.forward(&x) + x_t)
    }

    /// Loads named arrays produced by [`named_arrays`](Self::named_arrays).
    /// Every model parameter must be present; extra names are ignored.
    pub fn load_named(&self, arrays: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        let mut seen = 0usize;
        for (name, shape, data) in arrays {
            if self.store.get(name).is_none() {
                continue;
            }
            let data: Vec<f64> = data.iter().map(|&v| f64::from(v)).collect();
            self.store.set(name, shape, &data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            seen += 1;
        }
        if seen != self.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint provides {seen} of {} model parameters",
                self.store.len()
            )));
        }
        Ok(())
    }

    /// Every parameter as `(name, shape, f32 values)`, sorted by name.
    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.store
            .iter()
            .map(|(name, p)| {
                let data = p.to_vec().iter().map(|v| v.as_f64() as f32).collect();
                (name.to_string(), p.shape(), data)
            })
            .collect()
    }
}
