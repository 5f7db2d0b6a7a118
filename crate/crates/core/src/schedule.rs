//! Linear variance schedule and the forward (noising) process.
//!
//! Timesteps are 1-based everywhere in the public API, matching the usual
//! `beta_1 .. beta_T` notation. Storage is 0-based and held in `f64`; values
//! are only cast to the tensor dtype when they become coefficients.

use c2f_autograd::{Float, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// A forward-process draw: `x_t` together with the noise and timesteps used.
#[derive(Debug, Clone)]
pub struct NoisySample<T: Float> {
    pub x_t: Tensor<T>,
    pub t: Vec<usize>,
    pub eps: Tensor<T>,
}

impl DiffusionSchedule {
    /// Betas increase linearly from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(beta_start) || !in_unit(beta_end) {
            return Err(Error::invalid(format!(
                "betas must lie in (0, 1), got {beta_start} and {beta_end}"
            )));
        }
        if beta_start > beta_end {
            return Err(Error::invalid(format!(
                "beta_start {beta_start} exceeds beta_end {beta_end}"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                .collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            beta_start,
            beta_end,
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::Timestep {
                t,
                lo: 1,
                hi: self.steps(),
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.check(t)?])
    }

    /// Cumulative product of alphas up to `t`; `t = 0` yields exactly 1.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bars[self.check(t)?])
    }

    /// One Markov noising step `q(x_t | x_{t-1})`.
    pub fn q_step<T: Float>(&self, x_prev: &Tensor<T>, t: usize, eps: &Tensor<T>) -> Result<Tensor<T>> {
        let beta = self.beta(t)?;
        same_shape(x_prev, eps)?;
        Ok(x_prev.scale((1.0 - beta).sqrt()) + eps.scale(beta.sqrt()))
    }

    /// Jumps straight to `x_t` given `x_0`; `ts` holds one timestep per batch row.
    pub fn q_sample<T: Float>(&self, x0: &Tensor<T>, ts: &[usize], eps: &Tensor<T>) -> Result<NoisySample<T>> {
        same_shape(x0, eps)?;
        if x0.rank() == 0 {
            return Err(Error::Shape("q_sample needs a batch axis".into()));
        }
        let batch = x0.dim(0);
        if ts.len() != batch {
            return Err(Error::Shape(format!(
                "{} timesteps for a batch of {batch}",
                ts.len()
            )));
        }
        let mut signal = Vec::with_capacity(batch);
        let mut noise = Vec::with_capacity(batch);
        for &t in ts {
            let ab = self.alpha_bars[self.check(t)?];
            signal.push(ab.sqrt());
            noise.push((1.0 - ab).sqrt());
        }
        let x_t = x0 * per_row(&signal, x0.rank()) + eps * per_row(&noise, x0.rank());
        Ok(NoisySample {
            x_t,
            t: ts.to_vec(),
            eps: eps.clone(),
        })
    }
}

/// Builds a `(B, 1, .., 1)` coefficient tensor of the given rank.
pub(crate) fn per_row<T: Float>(values: &[f64], rank: usize) -> Tensor<T> {
    let mut shape = vec![1usize; rank];
    shape[0] = values.len();
    Tensor::from_f64(values, &shape)
}

pub(crate) fn same_shape<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_tensor, seeded};

    fn standard() -> DiffusionSchedule {
        DiffusionSchedule::linear(1000, 1e-4, 2e-2).unwrap()
    }

    #[test]
    fn endpoints_and_linearity() {
        let s = standard();
        assert_eq!(s.beta(1).unwrap(), 1e-4);
        assert!((s.beta(1000).unwrap() - 2e-2).abs() < 1e-17);
        let step = (2e-2 - 1e-4) / 999.0;
        for t in 2..=1000 {
            let d = s.beta(t).unwrap() - s.beta(t - 1).unwrap();
            assert!((d - step).abs() < 1e-15, "t={t}");
        }
    }

    #[test]
    fn single_step_schedule() {
        let s = DiffusionSchedule::linear(1, 1e-4, 1e-4).unwrap();
        assert_eq!(s.betas(), &[1e-4]);
        assert_eq!(s.alpha_bars(), &[0.9999]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(DiffusionSchedule::linear(0, 1e-4, 2e-2).is_err());
        assert!(DiffusionSchedule::linear(10, 0.0, 2e-2).is_err());
        assert!(DiffusionSchedule::linear(10, 1e-4, 1.0).is_err());
        assert!(DiffusionSchedule::linear(10, 0.5, 0.1).is_err());
    }

    #[test]
    fn alpha_bar_matches_running_product_oracle() {
        let s = standard();
        // independent recomputation straight from the interpolation formula
        let mut prod = 1.0f64;
        for i in 1..=1000u32 {
            let beta = 1e-4 + (2e-2 - 1e-4) * f64::from(i - 1) / 999.0;
            prod *= 1.0 - beta;
        }
        assert!((s.alpha_bar(1000).unwrap() - prod).abs() <= 1e-15 * prod.max(1e-300) + 1e-18);
        assert!(prod > 3.0e-5 && prod < 5.0e-5, "alpha_bar_T = {prod}");
    }

    #[test]
    fn recurrence_and_monotonicity() {
        let s = standard();
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        for t in 1..=1000 {
            let prev = s.alpha_bar(t - 1).unwrap();
            let cur = s.alpha_bar(t).unwrap();
            assert_eq!(cur, prev * (1.0 - s.beta(t).unwrap()));
            assert!(cur < prev);
            let unit = cur.sqrt().powi(2) + (1.0 - cur).sqrt().powi(2);
            assert!((unit - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn timestep_bounds() {
        let s = standard();
        let x = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        assert!(s.q_step(&x, 0, &x).is_err());
        assert!(s.q_step(&x, 1001, &x).is_err());
        assert!(s.q_sample(&x, &[1001], &x).is_err());
        assert!(s.q_sample(&x, &[1, 2], &x).is_err());
    }

    #[test]
    fn zero_noise_and_zero_signal() {
        let s = standard();
        let mut rng = seeded(3);
        let x = gaussian_tensor::<f64>(&mut rng, &[2, 3, 4, 4]);
        let zero = Tensor::zeros(x.shape());

        let out = s.q_step(&x, 500, &zero).unwrap();
        let want = x.scale((1.0 - s.beta(500).unwrap()).sqrt());
        assert_eq!(out.to_vec(), want.to_vec());
        let out = s.q_step(&zero, 500, &x).unwrap();
        assert_eq!(out.to_vec(), x.scale(s.beta(500).unwrap().sqrt()).to_vec());

        let ns = s.q_sample(&x, &[700, 700], &zero).unwrap();
        let c = s.alpha_bar(700).unwrap().sqrt();
        assert_eq!(ns.x_t.to_vec(), x.scale(c).to_vec());
        let ns = s.q_sample(&zero, &[700, 700], &x).unwrap();
        let c = (1.0 - s.alpha_bar(700).unwrap()).sqrt();
        assert_eq!(ns.x_t.to_vec(), x.scale(c).to_vec());
        assert_eq!(ns.t, vec![700, 700]);
    }

    #[test]
    fn terminal_sample_is_nearly_pure_noise() {
        let s = standard();
        let mut rng = seeded(11);
        let x0 = Tensor::<f64>::ones(&[1, 3, 4, 4]);
        let eps = gaussian_tensor::<f64>(&mut rng, &[1, 3, 4, 4]);
        let ns = s.q_sample(&x0, &[1000], &eps).unwrap();
        let coef = s.alpha_bar(1000).unwrap().sqrt();
        let diff = &ns.x_t - &eps;
        for (d, e) in diff.data().iter().zip(eps.data()) {
            // x_t - eps = coef * x0 + (sqrt(1 - ab) - 1) * eps
            let resid = (d - coef).abs();
            assert!(resid <= e.abs() * 1e-4 + 1e-12);
        }
        assert!(coef < 7e-3);
    }

    #[test]
    fn markov_chain_matches_closed_form_in_distribution() {
        // Chaining q_step from a fixed x0 must give mean sqrt(ab_t) x0 and
        // variance 1 - ab_t per element, like a single q_sample draw.
        let s = standard();
        let x0 = 0.8f64;
        let trials = 10_000;
        for &t in &[1usize, 10, 100, 1000] {
            let mut rng = seeded(t as u64);
            let mut x = Tensor::<f64>::full(x0, &[trials]);
            for k in 1..=t {
                let eps = gaussian_tensor::<f64>(&mut rng, &[trials]);
                x = s.q_step(&x, k, &eps).unwrap();
            }
            let ab = s.alpha_bar(t).unwrap();
            let (mean_want, var_want) = (ab.sqrt() * x0, 1.0 - ab);
            let n = trials as f64;
            let mean = x.data().iter().sum::<f64>() / n;
            let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se_mean = (var_want / n).sqrt();
            // variance of a sample variance of Gaussians is 2 sigma^4 / (n - 1)
            let se_var = (2.0 * var_want * var_want / (n - 1.0)).sqrt();
            assert!((mean - mean_want).abs() < 3.0 * se_mean, "t={t}: mean {mean} vs {mean_want}");
            assert!((var - var_want).abs() < 3.0 * se_var, "t={t}: var {var} vs {var_want}");
        }
    }
}
