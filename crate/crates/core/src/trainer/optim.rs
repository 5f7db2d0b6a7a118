use std::collections::BTreeMap;

use c2f_autograd::Float;

use super::plan::AdamWConfig;
use crate::error::{Error, Result};
use crate::network::ParamStore;

/// Named gradients in double precision.
pub type NamedGrads = Vec<(String, Vec<f64>)>;

/// Adam with decoupled weight decay. Moments are kept in `f64` regardless of
/// the parameter dtype so a resumed run continues exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update at learning rate `lr`. Parameters missing from
    /// `grads` are treated as having zero gradient.
    pub fn update<T: Float>(&mut self, params: &ParamStore<T>, grads: &NamedGrads, lr: f64) -> Result<()> {
        let by_name: BTreeMap<&str, &Vec<f64>> = grads.iter().map(|(n, g)| (n.as_str(), g)).collect();
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in params.iter() {
            let n = p.numel();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let g = by_name.get(name).map(|g| g.as_slice());
            if g.is_some_and(|g| g.len() != n) {
                return Err(Error::Shape(format!("gradient for {name} has the wrong length")));
            }
            let data: Vec<T> = p
                .to_vec()
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let gi = g.map_or(0.0, |g| g[i]);
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                    let w = w.as_f64();
                    let update = (m[i] / bias1) / ((v[i] / bias2).sqrt() + eps) + weight_decay * w;
                    T::from_f64(w - lr * update)
                })
                .collect();
            p.set(data);
        }
        Ok(())
    }

    /// First and second moments keyed by parameter name.
    pub fn moments(&self) -> &BTreeMap<String, (Vec<f64>, Vec<f64>)> {
        &self.moments
    }

    pub fn restore(&mut self, step: u64, moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>) {
        self.step = step;
        self.moments = moments;
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut NamedGrads, max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|(_, g)| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|(_, g)| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.constant("w", &[values.len()], 0.0).unwrap();
        s.set("w", &[values.len()], values).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let s = store(&[1.0, -2.0, 0.5]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.update(&s, &vec![("w".into(), vec![0.3, -4.0, 0.0])], 0.1).unwrap();
        let w = s.get("w").unwrap().to_vec();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn matches_hand_rolled_reference_over_steps() {
        let cfg = AdamWConfig {
            weight_decay: 0.01,
            ..AdamWConfig::default()
        };
        let s = store(&[0.7]);
        let mut opt = AdamW::new(cfg);
        let (mut w, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for k in 1..=5 {
            let g = 0.2 * k as f64 - 0.5;
            opt.update(&s, &vec![("w".into(), vec![g])], 0.05).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(k));
            let vh = v / (1.0 - 0.999f64.powi(k));
            w -= 0.05 * (mh / (vh.sqrt() + 1e-8) + 0.01 * w);
            assert!((s.get("w").unwrap().to_vec()[0] - w).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_learning_rate_is_bitwise_no_op() {
        let mut s = ParamStore::<f32>::new();
        s.constant("a", &[3], 0.1).unwrap();
        let before = s.get("a").unwrap().to_vec();
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.update(&s, &vec![("a".into(), vec![1.0, -1.0, 3.0])], 0.0).unwrap();
        assert_eq!(s.get("a").unwrap().to_vec(), before);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g: NamedGrads = vec![("a".into(), vec![3.0]), ("b".into(), vec![4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].1[0] - 0.6).abs() < 1e-15 && (g[1].1[0] - 0.8).abs() < 1e-15);
        let mut small: NamedGrads = vec![("a".into(), vec![0.1])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].1[0], 0.1);
    }
}
