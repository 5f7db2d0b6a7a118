//! Run configuration: flat `key = value` text with dotted section prefixes.
//!
//! Every key has a default; unknown keys and bad values are reported all at
//! once. Blank lines and `#` comments are ignored.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{DftConfig, LEVELS};
use crate::schedule::DiffusionSchedule;
use crate::trainer::{AdamWConfig, PatchCycleSchedule, Stage, TrainPlan};

/// Per-stage training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub total_iters: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub patch_cycle: Vec<(usize, usize)>,
    pub cycle_period: usize,
    pub grad_clip: Option<f64>,
}

impl StageConfig {
    fn from_plan(plan: &TrainPlan) -> Self {
        Self {
            total_iters: plan.total_iters,
            lr_start: plan.lr_start,
            lr_end: plan.lr_end,
            patch_cycle: plan.patch_cycle.entries().to_vec(),
            cycle_period: plan.patch_cycle.period(),
            grad_clip: plan.grad_clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: DftConfig,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub coarse: StageConfig,
    pub fine: StageConfig,
    pub optimizer: AdamWConfig,
    pub lambda_ssim: f64,
    pub sample_steps: usize,
    pub augment: bool,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub out_dir: String,
    /// Corpus root holding `clean/` and `degraded/`.
    pub train_dir: String,
    /// Held-out corpus scored at checkpoints; empty disables it.
    pub eval_dir: String,
    pub kind: String,
    pub params: String,
    pub y_channel: bool,
    pub eval_steps: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let coarse = TrainPlan::full_coarse();
        Self {
            model: DftConfig::full(),
            schedule_steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            coarse: StageConfig::from_plan(&coarse),
            fine: StageConfig::from_plan(&TrainPlan::full_fine()),
            optimizer: coarse.optimizer,
            lambda_ssim: coarse.lambda_ssim,
            sample_steps: coarse.sample_steps,
            augment: true,
            log_every: 100,
            checkpoint_every: 10_000,
            out_dir: "runs".into(),
            train_dir: "corpus".into(),
            eval_dir: String::new(),
            kind: "rain".into(),
            params: String::new(),
            y_channel: true,
            eval_steps: 4,
            seed: 0,
        }
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn opt_float(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl RunConfig {
    /// Desk-scale preset: tiny network, 32x32 patches, short stages.
    pub fn desk() -> Self {
        let base = Self::default();
        Self {
            model: DftConfig::tiny(),
            coarse: StageConfig {
                total_iters: 2000,
                lr_start: 1e-3,
                lr_end: 1e-5,
                patch_cycle: vec![(32, 8)],
                cycle_period: 1000,
                grad_clip: None,
            },
            fine: StageConfig {
                total_iters: 500,
                lr_start: 1e-4,
                lr_end: 1e-6,
                patch_cycle: vec![(32, 4)],
                cycle_period: 500,
                grad_clip: Some(1.0),
            },
            augment: false,
            log_every: 10,
            checkpoint_every: 500,
            ..base
        }
    }

    fn stage(&self, stage: Stage) -> &StageConfig {
        match stage {
            Stage::Coarse => &self.coarse,
            Stage::Fine => &self.fine,
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.schedule_steps, self.beta_start, self.beta_end)
    }

    pub fn train_plan(&self, stage: Stage) -> Result<TrainPlan> {
        let s = self.stage(stage);
        let plan = TrainPlan {
            stage,
            total_iters: s.total_iters,
            optimizer: self.optimizer,
            lr_start: s.lr_start,
            lr_end: s.lr_end,
            patch_cycle: PatchCycleSchedule::new(s.patch_cycle.clone(), s.cycle_period)?,
            lambda_ssim: self.lambda_ssim,
            sample_steps: self.sample_steps,
            grad_clip: s.grad_clip,
            augment: self.augment,
            seed: self.seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Every `(key, value)` in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let mut out = vec![
            ("model.base_channels", m.base_channels.to_string()),
            ("model.channels", join(&m.channels)),
            ("model.blocks", join(&m.blocks)),
            ("model.heads", join(&m.heads)),
            ("model.ffn_expansion", m.ffn_expansion.to_string()),
            ("model.time_embedding", m.time_embedding.to_string()),
            ("schedule.steps", self.schedule_steps.to_string()),
            ("schedule.beta_start", self.beta_start.to_string()),
            ("schedule.beta_end", self.beta_end.to_string()),
        ];
        for (prefix, s) in [("coarse", &self.coarse), ("fine", &self.fine)] {
            let keys: [&'static str; 6] = if prefix == "coarse" {
                [
                    "coarse.total_iters",
                    "coarse.lr_start",
                    "coarse.lr_end",
                    "coarse.patch_cycle",
                    "coarse.cycle_period",
                    "coarse.grad_clip",
                ]
            } else {
                [
                    "fine.total_iters",
                    "fine.lr_start",
                    "fine.lr_end",
                    "fine.patch_cycle",
                    "fine.cycle_period",
                    "fine.grad_clip",
                ]
            };
            let cycle = s.patch_cycle.iter().map(|(p, b)| format!("{p}x{b}")).collect::<Vec<_>>().join(",");
            out.extend([
                (keys[0], s.total_iters.to_string()),
                (keys[1], s.lr_start.to_string()),
                (keys[2], s.lr_end.to_string()),
                (keys[3], cycle),
                (keys[4], s.cycle_period.to_string()),
                (keys[5], opt_float(s.grad_clip)),
            ]);
        }
        out.extend([
            ("fine.lambda_ssim", self.lambda_ssim.to_string()),
            ("fine.sample_steps", self.sample_steps.to_string()),
            ("train.adam_beta1", self.optimizer.beta1.to_string()),
            ("train.adam_beta2", self.optimizer.beta2.to_string()),
            ("train.adam_eps", self.optimizer.eps.to_string()),
            ("train.weight_decay", self.optimizer.weight_decay.to_string()),
            ("train.augment", self.augment.to_string()),
            ("train.log_every", self.log_every.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("train.out_dir", self.out_dir.clone()),
            ("data.train_dir", self.train_dir.clone()),
            ("data.eval_dir", self.eval_dir.clone()),
            ("data.kind", self.kind.clone()),
            ("data.params", self.params.clone()),
            ("eval.y_channel", self.y_channel.to_string()),
            ("eval.steps", self.eval_steps.to_string()),
            ("seed", self.seed.to_string()),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Parses text over the defaults. All problems are collected into one
    /// [`Error::Config`].
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_over(Self::default(), text)
    }

    /// Parses text over a given base configuration.
    pub fn parse_over(base: Self, text: &str) -> Result<Self> {
        let mut cfg = base;
        let mut errs = Vec::new();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errs.push(format!("line {}: expected `key = value`, got `{line}`", lineno + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                errs.push(format!("line {}: {key} given twice", lineno + 1));
                continue;
            }
            if let Err(msg) = cfg.set(key, value) {
                errs.push(format!("line {}: {msg}", lineno + 1));
            }
        }
        errs.extend(cfg.problems());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("{key} = {v}: not a valid number"))
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("{key} = {v}: expected true or false")),
            }
        }
        fn levels(key: &str, v: &str) -> std::result::Result<[usize; LEVELS], String> {
            let items: Vec<usize> = v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| format!("{key} = {v}: expected {LEVELS} comma-separated integers"))?;
            items
                .try_into()
                .map_err(|_| format!("{key} = {v}: expected {LEVELS} comma-separated integers"))
        }
        fn clip(key: &str, v: &str) -> std::result::Result<Option<f64>, String> {
            if v == "none" {
                Ok(None)
            } else {
                num(key, v).map(Some)
            }
        }
        fn cycle(key: &str, v: &str) -> std::result::Result<Vec<(usize, usize)>, String> {
            PatchCycleSchedule::parse_entries(v).map_err(|e| format!("{key} = {v}: {e}"))
        }
        let k = key;
        match key {
            "model.base_channels" => self.model.base_channels = num(k, value)?,
            "model.channels" => self.model.channels = levels(k, value)?,
            "model.blocks" => self.model.blocks = levels(k, value)?,
            "model.heads" => self.model.heads = levels(k, value)?,
            "model.ffn_expansion" => self.model.ffn_expansion = num(k, value)?,
            "model.time_embedding" => self.model.time_embedding = flag(k, value)?,
            "schedule.steps" => self.schedule_steps = num(k, value)?,
            "schedule.beta_start" => self.beta_start = num(k, value)?,
            "schedule.beta_end" => self.beta_end = num(k, value)?,
            "coarse.total_iters" => self.coarse.total_iters = num(k, value)?,
            "coarse.lr_start" => self.coarse.lr_start = num(k, value)?,
            "coarse.lr_end" => self.coarse.lr_end = num(k, value)?,
            "coarse.patch_cycle" => self.coarse.patch_cycle = cycle(k, value)?,
            "coarse.cycle_period" => self.coarse.cycle_period = num(k, value)?,
            "coarse.grad_clip" => self.coarse.grad_clip = clip(k, value)?,
            "fine.total_iters" => self.fine.total_iters = num(k, value)?,
            "fine.lr_start" => self.fine.lr_start = num(k, value)?,
            "fine.lr_end" => self.fine.lr_end = num(k, value)?,
            "fine.patch_cycle" => self.fine.patch_cycle = cycle(k, value)?,
            "fine.cycle_period" => self.fine.cycle_period = num(k, value)?,
            "fine.grad_clip" => self.fine.grad_clip = clip(k, value)?,
            "fine.lambda_ssim" => self.lambda_ssim = num(k, value)?,
            "fine.sample_steps" => self.sample_steps = num(k, value)?,
            "train.adam_beta1" => self.optimizer.beta1 = num(k, value)?,
            "train.adam_beta2" => self.optimizer.beta2 = num(k, value)?,
            "train.adam_eps" => self.optimizer.eps = num(k, value)?,
            "train.weight_decay" => self.optimizer.weight_decay = num(k, value)?,
            "train.augment" => self.augment = flag(k, value)?,
            "train.log_every" => self.log_every = num(k, value)?,
            "train.checkpoint_every" => self.checkpoint_every = num(k, value)?,
            "train.out_dir" => self.out_dir = value.to_string(),
            "data.train_dir" => self.train_dir = value.to_string(),
            "data.eval_dir" => self.eval_dir = value.to_string(),
            "data.kind" => self.kind = value.to_string(),
            "data.params" => self.params = value.to_string(),
            "eval.y_channel" => self.y_channel = flag(k, value)?,
            "eval.steps" => self.eval_steps = num(k, value)?,
            "seed" => self.seed = num(k, value)?,
            _ => return Err(format!("unknown key {key}")),
        }
        Ok(())
    }

    /// Cross-field problems, one message per bad field.
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(Error::Config(e)) = self.model.validate() {
            errs.extend(e);
        }
        if let Err(e) = self.schedule() {
            errs.push(format!("schedule: {e}"));
        }
        for stage in [Stage::Coarse, Stage::Fine] {
            // plan messages name generic `train.*` fields; point them at this file's keys
            let rename = |m: String| {
                ["total_iters", "lr_start", "lr_end", "grad_clip", "patch_cycle"]
                    .iter()
                    .fold(m, |m, k| m.replace(&format!("train.{k}"), &format!("{stage}.{k}")))
                    .replace("train.lambda_ssim", "fine.lambda_ssim")
                    .replace("train.sample_steps", "fine.sample_steps")
            };
            match self.train_plan(stage) {
                Err(Error::Config(e)) => errs.extend(e.into_iter().map(rename)),
                Err(e) => errs.push(format!("{stage}: {e}")),
                Ok(_) => {}
            }
        }
        if self.log_every == 0 {
            errs.push("train.log_every must be positive".into());
        }
        if self.checkpoint_every == 0 {
            errs.push("train.checkpoint_every must be positive".into());
        }
        if self.eval_steps < 2 {
            errs.push(format!("eval.steps = {}: need at least 2", self.eval_steps));
        }
        // the SSIM term needs the 11x11 window to fit inside every fine patch
        for &(p, _) in &self.fine.patch_cycle {
            if p < 11 && self.lambda_ssim > 0.0 {
                errs.push(format!("fine.patch_cycle: patch {p} is smaller than the SSIM window"));
            }
        }
        errs.sort();
        errs.dedup();
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_serialize_the_published_constants() {
        let text = RunConfig::default().to_text();
        for line in [
            "schedule.steps = 1000",
            "schedule.beta_start = 0.0001",
            "schedule.beta_end = 0.02",
            "fine.lambda_ssim = 0.84",
            "fine.sample_steps = 4",
            "model.blocks = 4,6,6,8",
            "model.heads = 1,2,4,8",
            "model.channels = 48,96,192,384",
            "coarse.patch_cycle = 32x360,64x96,128x24",
            "coarse.lr_start = 0.0003",
            "fine.lr_end = 0.0000001",
        ] {
            assert!(text.lines().any(|l| l == line), "missing `{line}` in\n{text}");
        }
    }

    #[test]
    fn text_roundtrip() {
        for cfg in [RunConfig::default(), RunConfig::desk()] {
            assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_files_override_defaults() {
        let cfg = RunConfig::parse("# desk\nseed = 7\n\nmodel.time_embedding = false\ncoarse.grad_clip = 0.5\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert!(!cfg.model.time_embedding);
        assert_eq!(cfg.coarse.grad_clip, Some(0.5));
        assert_eq!(cfg.model.blocks, [4, 6, 6, 8]);
    }

    #[test]
    fn every_problem_is_reported() {
        let text = "bogus.key = 1\nseed = x\nfine.lambda_ssim = 2\nmodel.blocks = 1,2\nseed = 3\nno equals sign\n";
        match RunConfig::parse(text) {
            Err(Error::Config(errs)) => {
                let all = errs.join("\n");
                for needle in ["bogus.key", "seed = x", "lambda_ssim", "model.blocks", "twice", "key = value"] {
                    assert!(all.contains(needle), "`{needle}` not in\n{all}");
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn plans_follow_sections() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train_plan(Stage::Coarse).unwrap(), TrainPlan::full_coarse());
        assert_eq!(cfg.train_plan(Stage::Fine).unwrap(), TrainPlan::full_fine());
    }
}
