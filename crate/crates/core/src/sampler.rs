//! Implicit (deterministic) sampling over a sparse timestep grid, plus the
//! ancestral reverse step kept as a reference path.

use c2f_autograd::{no_grad, Float, Tensor};

use crate::error::{Error, Result};
use crate::network::DftModel;
use crate::rng;
use crate::schedule::{same_shape, DiffusionSchedule};

/// Anything that predicts the noise in `x_t` given the degraded image `y`.
pub trait NoisePredictor<T: Float> {
    fn predict(&self, x_t: &Tensor<T>, y: &Tensor<T>, t: usize) -> Result<Tensor<T>>;
}

impl<T: Float> NoisePredictor<T> for DftModel<T> {
    fn predict(&self, x_t: &Tensor<T>, y: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        if x_t.rank() == 0 {
            return Err(Error::Shape("predictor input has no batch axis".into()));
        }
        self.forward(x_t, y, &vec![t; x_t.dim(0)])
    }
}

impl<T: Float, F> NoisePredictor<T> for F
where
    F: Fn(&Tensor<T>, &Tensor<T>, usize) -> Result<Tensor<T>>,
{
    fn predict(&self, x_t: &Tensor<T>, y: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        self(x_t, y, t)
    }
}

/// Step count and the descending timestep grid `t_S > ... > t_1`; the
/// terminal `t_0 = 0` is implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerPlan {
    steps: usize,
    total: usize,
    grid: Vec<usize>,
}

impl SamplerPlan {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn total_steps(&self) -> usize {
        self.total
    }

    /// `[t_S, ..., t_1]`.
    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    /// `(t_j, t_{j-1})` in sampling order, ending with `(t_1, 0)`.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        let mut next = self.grid[1..].to_vec();
        next.push(0);
        self.grid.iter().copied().zip(next).collect()
    }
}

/// `t_j = floor((j - 1) T / (S - 1)) + 1`, clamped to `T`, for `j = S..1`.
pub fn timestep_grid(steps: usize, total: usize) -> Result<SamplerPlan> {
    if steps < 2 {
        return Err(Error::invalid(format!("sampling needs at least 2 steps, got {steps}")));
    }
    if steps > total {
        return Err(Error::invalid(format!("{steps} sampling steps exceed the {total}-step schedule")));
    }
    let grid = (1..=steps)
        .rev()
        .map(|j| ((j - 1) * total / (steps - 1) + 1).min(total))
        .collect();
    Ok(SamplerPlan { steps, total, grid })
}

fn check_transition(sched: &DiffusionSchedule, t: usize, t_prev: usize) -> Result<()> {
    if t > sched.steps() || t == 0 {
        return Err(Error::Timestep { t, lo: 1, hi: sched.steps() });
    }
    if t_prev >= t {
        return Err(Error::invalid(format!("implicit step must go backwards, got {t} -> {t_prev}")));
    }
    Ok(())
}

/// Clean-image estimate implied by `(x_t, eps_hat)`.
pub fn predict_x0<T: Float>(x: &Tensor<T>, eps_hat: &Tensor<T>, t: usize, sched: &DiffusionSchedule) -> Result<Tensor<T>> {
    same_shape(x, eps_hat)?;
    let ab = sched.alpha_bar(t)?;
    Ok((x - eps_hat.scale((1.0 - ab).sqrt())).scale(1.0 / ab.sqrt()))
}

/// One deterministic jump `x_{t_j} -> x_{t_{j-1}}`.
pub fn implicit_step<T: Float>(
    x: &Tensor<T>,
    eps_hat: &Tensor<T>,
    t: usize,
    t_prev: usize,
    sched: &DiffusionSchedule,
) -> Result<Tensor<T>> {
    check_transition(sched, t, t_prev)?;
    let x0 = predict_x0(x, eps_hat, t, sched)?;
    if t_prev == 0 {
        return Ok(x0);
    }
    let ab_prev = sched.alpha_bar(t_prev)?;
    Ok(x0.scale(ab_prev.sqrt()) + eps_hat.scale((1.0 - ab_prev).sqrt()))
}

/// Runs the grid from a given `x_{t_S}`. `on_step(t_prev, x)` sees every
/// intermediate state. Without `track_gradients` no graph is recorded.
pub fn sample_from<T: Float>(
    model: &impl NoisePredictor<T>,
    y: &Tensor<T>,
    x_start: Tensor<T>,
    plan: &SamplerPlan,
    sched: &DiffusionSchedule,
    track_gradients: bool,
    mut on_step: impl FnMut(usize, &Tensor<T>),
) -> Result<Tensor<T>> {
    if plan.total_steps() != sched.steps() {
        return Err(Error::invalid(format!(
            "plan built for {} steps, schedule has {}",
            plan.total_steps(),
            sched.steps()
        )));
    }
    same_shape(&x_start, y)?;
    let run = || {
        let mut x = x_start;
        for (t, t_prev) in plan.transitions() {
            let eps_hat = model.predict(&x, y, t)?;
            x = implicit_step(&x, &eps_hat, t, t_prev, sched)?;
            on_step(t_prev, &x);
        }
        Ok(x)
    };
    if track_gradients {
        run()
    } else {
        no_grad(run)
    }
}

/// Restores from pure noise drawn with `seed`.
pub fn sample_restore<T: Float>(
    model: &impl NoisePredictor<T>,
    y: &Tensor<T>,
    plan: &SamplerPlan,
    sched: &DiffusionSchedule,
    seed: u64,
    track_gradients: bool,
) -> Result<Tensor<T>> {
    let x_start = rng::gaussian_tensor(&mut rng::seeded(seed), y.shape());
    sample_from(model, y, x_start, plan, sched, track_gradients, |_, _| {})
}

/// One ancestral reverse step. `z` is ignored at `t = 1`.
pub fn ancestral_step<T: Float>(
    x: &Tensor<T>,
    eps_hat: &Tensor<T>,
    t: usize,
    z: &Tensor<T>,
    sched: &DiffusionSchedule,
) -> Result<Tensor<T>> {
    same_shape(x, eps_hat)?;
    same_shape(x, z)?;
    let (alpha, beta, ab) = (sched.alpha(t)?, sched.beta(t)?, sched.alpha_bar(t)?);
    let mean = (x - eps_hat.scale((1.0 - alpha) / (1.0 - ab).sqrt())).scale(1.0 / alpha.sqrt());
    if t == 1 {
        return Ok(mean);
    }
    Ok(mean + z.scale(beta.sqrt()))
}
