//! Coarse (noise regression) and fine (sampler-output) training.

mod optim;
mod plan;

use std::collections::BTreeMap;
use std::fmt;

use c2f_autograd::{Float, Tensor};
use rand::Rng;

pub use self::optim::{clip_global_norm, AdamW, NamedGrads};
pub use self::plan::{lr_at, patch_cycle_at, AdamWConfig, PatchCycleSchedule, Stage, TrainPlan};
use crate::data::{sample_batch, stack, EpochOrder, ImagePair, PatchBatch};
use crate::error::{Error, Result};
use crate::metrics::{ssim_tensor, SsimWindow};
use crate::network::DftModel;
use crate::rng::{gaussian_tensor, seeded, RngState, StdRng};
use crate::sampler::{sample_from, timestep_grid, NoisePredictor};
use crate::schedule::DiffusionSchedule;

fn same_shape<T: Float>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute error between true and predicted noise.
pub fn coarse_loss<T: Float>(eps: &Tensor<T>, eps_hat: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(eps, eps_hat, "coarse loss")?;
    Ok((eps - eps_hat).abs().mean_all())
}

/// `lambda * (1 - SSIM) + (1 - lambda) * L1` between a restoration and its target.
pub fn fine_loss<T: Float>(x_t0: &Tensor<T>, x: &Tensor<T>, lambda: f64, window: &SsimWindow) -> Result<Tensor<T>> {
    same_shape(x_t0, x, "fine loss")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("loss weight {lambda} outside [0, 1]")));
    }
    let l1 = (x_t0 - x).abs().mean_all();
    if lambda == 0.0 {
        return Ok(l1);
    }
    let ssim_term = ssim_tensor(x_t0, x, window)?.neg().add_scalar(1.0);
    Ok(ssim_term.scale(lambda) + l1.scale(1.0 - lambda))
}

/// Runs the sampler from `x_start` with gradients on and scores the result
/// against `x`.
#[allow(clippy::too_many_arguments)]
pub fn fine_objective<T: Float>(
    model: &impl NoisePredictor<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    x_start: Tensor<T>,
    steps: usize,
    sched: &DiffusionSchedule,
    lambda: f64,
    window: &SsimWindow,
) -> Result<Tensor<T>> {
    let grid = timestep_grid(steps, sched.steps())?;
    let x_t0 = sample_from(model, y, x_start, &grid, sched, true, |_, _| {})?;
    fine_loss(&x_t0, x, lambda, window)
}

/// Coarse loss on a fixed probe: every pair at `points` evenly spaced
/// timesteps from 1 to T, with noise drawn once from `seed`. Unlike the
/// per-step training loss it does not depend on which `t` a batch happened
/// to draw, so values from different checkpoints are comparable.
pub fn coarse_probe_loss<T: Float>(
    model: &impl NoisePredictor<T>,
    pairs: &[ImagePair],
    sched: &DiffusionSchedule,
    points: usize,
    seed: u64,
) -> Result<f64> {
    if points < 2 || pairs.is_empty() {
        return Err(Error::invalid("probe needs at least 2 timesteps and one pair"));
    }
    let clean: Vec<_> = pairs.iter().map(|p| p.clean.clone()).collect();
    let degraded: Vec<_> = pairs.iter().map(|p| p.degraded.clone()).collect();
    let x = stack::<T>(&clean)?;
    let y = stack::<T>(&degraded)?;
    let total = sched.steps();
    let mut rng = seeded(seed);
    c2f_autograd::no_grad(|| {
        let mut sum = 0.0;
        for k in 0..points {
            let t = 1 + k * (total - 1) / (points - 1);
            let ts = vec![t; pairs.len()];
            let eps = gaussian_tensor(&mut rng, x.shape());
            let noisy = sched.q_sample(&x, &ts, &eps)?;
            let eps_hat = model.predict(&noisy.x_t, &y, t)?;
            sum += coarse_loss(&eps, &eps_hat)?.item().as_f64();
        }
        Ok(sum / points as f64)
    })
}

/// How the model weights were obtained before training started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Scratch,
    Checkpoint,
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iter: usize,
    pub stage: Stage,
    pub loss: f64,
    pub lr: f64,
    pub patch: usize,
    pub batch: usize,
}

impl fmt::Display for StepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} stage={} loss={:.6} lr={:.4e} patch={} batch={}",
            self.iter, self.stage, self.loss, self.lr, self.patch, self.batch
        )
    }
}

/// Everything beyond the weights needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub stage: Stage,
    pub iteration: usize,
    pub rng: RngState,
    /// Pair indices consumed from the epoch order.
    pub samples_drawn: u64,
    pub optim_step: u64,
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

/// Owns the model during training. All randomness (timesteps, noise, crops,
/// augmentation, sampler starts) flows from one seeded stream, and the pair
/// order from `(seed, epoch)`.
pub struct Trainer<T: Float = f32> {
    model: DftModel<T>,
    sched: DiffusionSchedule,
    plan: TrainPlan,
    optim: AdamW,
    rng: StdRng,
    order: EpochOrder,
    iteration: usize,
    window: SsimWindow,
}

impl<T: Float> Trainer<T> {
    pub fn new(model: DftModel<T>, sched: DiffusionSchedule, plan: TrainPlan, dataset_len: usize, init: Init) -> Result<Self> {
        plan.validate()?;
        if plan.stage == Stage::Fine && init == Init::Scratch {
            return Err(Error::MissingCoarseInit);
        }
        Ok(Self {
            optim: AdamW::new(plan.optimizer),
            rng: seeded(plan.seed),
            order: EpochOrder::new(dataset_len, plan.seed)?,
            model,
            sched,
            plan,
            iteration: 0,
            window: SsimWindow::default(),
        })
    }

    /// Overrides the SSIM window of the fine loss (small patches).
    pub fn with_ssim_window(mut self, window: SsimWindow) -> Self {
        self.window = window;
        self
    }

    pub fn model(&self) -> &DftModel<T> {
        &self.model
    }

    pub fn into_model(self) -> DftModel<T> {
        self.model
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.sched
    }

    /// Steps completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.plan.total_iters
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            stage: self.plan.stage,
            iteration: self.iteration,
            rng: RngState::capture(&self.rng),
            samples_drawn: self.order.position(),
            optim_step: self.optim.steps_taken(),
            moments: self.optim.moments().clone(),
        }
    }

    pub fn restore_state(&mut self, state: TrainerState) -> Result<()> {
        if state.stage != self.plan.stage {
            return Err(Error::Checkpoint(format!(
                "cannot resume a {} run as {}",
                state.stage, self.plan.stage
            )));
        }
        if state.iteration > self.plan.total_iters {
            return Err(Error::Checkpoint(format!(
                "checkpoint at iteration {} is past the planned {}",
                state.iteration, self.plan.total_iters
            )));
        }
        self.iteration = state.iteration;
        self.rng = state.rng.restore();
        self.order.seek(state.samples_drawn);
        self.optim.restore(state.optim_step, state.moments);
        Ok(())
    }

    /// Draws the batch for the current iteration's patch-cycle entry.
    pub fn next_batch(&mut self, pairs: &[ImagePair]) -> Result<PatchBatch> {
        let (patch, batch) = patch_cycle_at(self.iteration, &self.plan.patch_cycle);
        sample_batch(pairs, &mut self.order, patch, batch, self.plan.augment, &mut self.rng)
    }

    /// Samples a batch and takes one optimizer step on it.
    pub fn step(&mut self, pairs: &[ImagePair]) -> Result<StepReport> {
        let batch = self.next_batch(pairs)?;
        self.train_step(&batch)
    }

    /// One optimizer step of the plan's stage on `batch`.
    pub fn train_step(&mut self, batch: &PatchBatch) -> Result<StepReport> {
        if self.is_finished() {
            return Err(Error::invalid(format!("plan of {} iterations is complete", self.plan.total_iters)));
        }
        let lr = lr_at(self.iteration, &self.plan)?;
        let (x, y) = batch.tensors::<T>()?;
        let leaves: Vec<(String, Tensor<T>)> =
            self.model.params().iter().map(|(n, p)| (n.to_string(), p.tensor())).collect();
        let loss = match self.plan.stage {
            Stage::Coarse => self.coarse_objective(&x, &y)?,
            Stage::Fine => {
                let x_start = gaussian_tensor(&mut self.rng, y.shape());
                fine_objective(
                    &self.model,
                    &x,
                    &y,
                    x_start,
                    self.plan.sample_steps,
                    &self.sched,
                    self.plan.lambda_ssim,
                    &self.window,
                )?
            }
        };
        let value = loss.item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                iter: self.iteration,
                loss: value,
            });
        }
        let grads = loss.backward();
        let mut named: NamedGrads = leaves
            .iter()
            .filter_map(|(n, leaf)| grads.get(leaf).map(|g| (n.clone(), g.iter().map(|v| v.as_f64()).collect())))
            .collect();
        if let Some(max) = self.plan.grad_clip {
            clip_global_norm(&mut named, max);
        }
        self.optim.update(self.model.params(), &named, lr)?;
        let report = StepReport {
            iter: self.iteration,
            stage: self.plan.stage,
            loss: value,
            lr,
            patch: batch.patch,
            batch: batch.len(),
        };
        self.iteration += 1;
        Ok(report)
    }

    fn coarse_objective(&mut self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        let total = self.sched.steps();
        let ts: Vec<usize> = (0..x.dim(0)).map(|_| self.rng.random_range(1..=total)).collect();
        let eps = gaussian_tensor(&mut self.rng, x.shape());
        let noisy = self.sched.q_sample(x, &ts, &eps)?;
        let eps_hat = self.model.forward(&noisy.x_t, y, &ts)?;
        coarse_loss(&eps, &eps_hat)
    }

    /// Trains until the plan is complete, handing each report to `observe`.
    pub fn run(&mut self, pairs: &[ImagePair], mut observe: impl FnMut(&Self, &StepReport) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let report = self.step(pairs)?;
            observe(self, &report)?;
        }
        Ok(())
    }
}
