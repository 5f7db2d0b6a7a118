use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Noise regression at uniformly drawn timesteps.
    Coarse,
    /// Restoration loss on the output of the unrolled sampler.
    Fine,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Stage::Coarse => 0,
            Stage::Fine => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Stage::Coarse),
            1 => Ok(Stage::Fine),
            _ => Err(Error::invalid(format!("unknown stage code {code}"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Stage::Coarse),
            "fine" => Ok(Stage::Fine),
            _ => Err(Error::invalid(format!("stage must be coarse or fine, got `{s}`"))),
        }
    }
}

/// Cycles through `(patch, batch)` entries, `period` iterations each.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCycleSchedule {
    entries: Vec<(usize, usize)>,
    period: usize,
}

impl PatchCycleSchedule {
    pub fn new(entries: Vec<(usize, usize)>, period: usize) -> Result<Self> {
        let s = Self { entries, period };
        let errs = s.problems();
        if errs.is_empty() {
            Ok(s)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub(crate) fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.entries.is_empty() {
            errs.push("patch cycle has no entries".to_string());
        }
        for &(p, b) in &self.entries {
            if p == 0 || p % 8 != 0 {
                errs.push(format!("patch size {p} is not a positive multiple of 8"));
            }
            if b == 0 {
                errs.push(format!("batch size for patch {p} must be positive"));
            }
        }
        if self.period == 0 {
            errs.push("patch cycle period must be positive".to_string());
        }
        errs
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn deraining_coarse() -> Self {
        Self {
            entries: vec![(32, 360), (64, 96), (128, 24)],
            period: 10_000,
        }
    }

    pub fn deraining_fine() -> Self {
        Self {
            entries: vec![(32, 96), (64, 24), (128, 6)],
            period: 5_000,
        }
    }

    /// Shared by deblurring and denoising; the period is not published for
    /// these tasks and follows the deraining value.
    pub fn restoration_coarse() -> Self {
        Self {
            entries: vec![(64, 96), (128, 24), (256, 6)],
            period: 10_000,
        }
    }

    pub fn restoration_fine() -> Self {
        Self {
            entries: vec![(32, 24), (64, 6), (128, 1)],
            period: 5_000,
        }
    }

    /// Looks up a preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "deraining-coarse" => Ok(Self::deraining_coarse()),
            "deraining-fine" => Ok(Self::deraining_fine()),
            "restoration-coarse" | "deblurring-coarse" | "denoising-coarse" => Ok(Self::restoration_coarse()),
            "restoration-fine" | "deblurring-fine" | "denoising-fine" => Ok(Self::restoration_fine()),
            _ => Err(Error::invalid(format!("unknown patch cycle preset `{name}`"))),
        }
    }

    /// `"32x360,64x96"` form used by config files.
    pub fn parse_entries(text: &str) -> Result<Vec<(usize, usize)>> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| {
                let (p, b) = item
                    .split_once('x')
                    .ok_or_else(|| Error::invalid(format!("patch cycle entry `{item}` is not <patch>x<batch>")))?;
                let num = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::invalid(format!("patch cycle entry `{item}` is not numeric")))
                };
                Ok((num(p)?, num(b)?))
            })
            .collect()
    }

    pub fn format_entries(&self) -> String {
        self.entries.iter().map(|(p, b)| format!("{p}x{b}")).collect::<Vec<_>>().join(",")
    }
}

/// `(patch, batch)` in force at `iter`.
pub fn patch_cycle_at(iter: usize, sched: &PatchCycleSchedule) -> (usize, usize) {
    sched.entries[(iter / sched.period) % sched.entries.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub stage: Stage,
    pub total_iters: usize,
    pub optimizer: AdamWConfig,
    pub lr_start: f64,
    pub lr_end: f64,
    pub patch_cycle: PatchCycleSchedule,
    /// Weight of the SSIM term in the fine loss.
    pub lambda_ssim: f64,
    /// Sampler steps unrolled by the fine stage.
    pub sample_steps: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub augment: bool,
    pub seed: u64,
}

impl TrainPlan {
    /// Deraining coarse schedule.
    pub fn full_coarse() -> Self {
        Self {
            stage: Stage::Coarse,
            total_iters: 270_000,
            optimizer: AdamWConfig::default(),
            lr_start: 3e-4,
            lr_end: 1e-5,
            patch_cycle: PatchCycleSchedule::deraining_coarse(),
            lambda_ssim: 0.84,
            sample_steps: 4,
            grad_clip: None,
            augment: true,
            seed: 0,
        }
    }

    /// Deraining fine schedule.
    pub fn full_fine() -> Self {
        Self {
            stage: Stage::Fine,
            total_iters: 90_000,
            lr_start: 1e-5,
            lr_end: 1e-7,
            patch_cycle: PatchCycleSchedule::deraining_fine(),
            grad_clip: Some(1.0),
            ..Self::full_coarse()
        }
    }

    pub fn full(stage: Stage) -> Self {
        match stage {
            Stage::Coarse => Self::full_coarse(),
            Stage::Fine => Self::full_fine(),
        }
    }

    /// Every violated invariant, phrased for a config report.
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.total_iters == 0 {
            errs.push("train.total_iters must be positive".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            errs.push(format!(
                "train.lr_start = {}, train.lr_end = {}: need lr_start >= lr_end > 0",
                self.lr_start, self.lr_end
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            errs.push(format!("train.lambda_ssim = {}: must lie in [0, 1]", self.lambda_ssim));
        }
        if self.stage == Stage::Fine && self.sample_steps < 2 {
            errs.push(format!("train.sample_steps = {}: fine training needs at least 2", self.sample_steps));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            errs.push(format!("optimizer betas ({}, {}) must lie in [0, 1)", o.beta1, o.beta2));
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            errs.push("optimizer eps must be positive and weight decay non-negative".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                errs.push(format!("train.grad_clip = {c}: must be positive"));
            }
        }
        errs.extend(self.patch_cycle.problems().into_iter().map(|e| format!("train.patch_cycle: {e}")));
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.problems();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Cosine-annealed learning rate for step `iter` of `plan.total_iters`.
pub fn lr_at(iter: usize, plan: &TrainPlan) -> Result<f64> {
    if iter > plan.total_iters {
        return Err(Error::invalid(format!("iteration {iter} beyond total {}", plan.total_iters)));
    }
    let frac = iter as f64 / plan.total_iters as f64;
    Ok(plan.lr_end + 0.5 * (plan.lr_start - plan.lr_end) * (1.0 + (PI * frac).cos()))
}
