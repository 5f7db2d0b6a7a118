//! Command implementations behind the `c2fdft` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use c2f_dft::checkpoint::Snapshot;
use c2f_dft::config::RunConfig;
use c2f_dft::data::{ingest_corpus, list_images, synth_clean, write_corpus, Degradation, Image, ImagePair};
use c2f_dft::metrics::{evaluate_images, evaluate_pairs, EvalReport};
use c2f_dft::network::DftModel;
use c2f_dft::restore::{evaluate_restoration, image_seed, restore_image_with, restore_pairs};
use c2f_dft::trainer::{Init, Stage, Trainer};
use c2f_dft::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the compute device.
pub const DEVICE_VAR: &str = "C2FDFT_DEVICE";

#[derive(Debug, Parser)]
#[command(name = "c2fdft", version, about = "Coarse-to-fine diffusion Transformer for image restoration")]
pub struct Cli {
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a paired corpus from clean images.
    MakeData(MakeDataArgs),
    /// Run coarse or fine training.
    Train(TrainArgs),
    /// Restore every image of a directory.
    Restore(RestoreArgs),
    /// Score predictions against ground truth (CSV on stdout).
    Eval(EvalArgs),
    /// Score and time restoration for several sampling step counts.
    AblateSteps(AblateArgs),
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    /// rain, blur or noise.
    #[arg(long)]
    pub kind: String,
    /// Directory of clean images.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub src: Option<PathBuf>,
    /// Generate this many procedural clean images instead of reading --src.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side length of synthetic images.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Degradation parameters, e.g. `sigma=0.1` or `density=0.02,angle=20`.
    #[arg(long, default_value = "")]
    pub params: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Full,
    Desk,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub stage: Stage,
    /// Config file applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults the config file is applied over.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Continue an interrupted run of the same stage.
    #[arg(long, conflicts_with = "init")]
    pub resume: Option<PathBuf>,
    /// Coarse checkpoint that initializes fine training.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Overrides `data.train_dir`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides `train.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub steps: usize,
    /// Also write every intermediate sampler state here.
    #[arg(long)]
    pub debug_steps: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Score the luma channel instead of RGB.
    #[arg(long)]
    pub y_channel: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Corpus root with `clean/` and `degraded/`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "2,3,4,5,10")]
    pub steps: String,
    /// Score RGB instead of the checkpoint's `eval.y_channel` setting.
    #[arg(long)]
    pub rgb: bool,
}

/// Fails unless the requested device is the CPU.
pub fn check_device(value: Option<&str>) -> Result<()> {
    match value.map(str::trim) {
        None | Some("") => Ok(()),
        Some(v) if v.eq_ignore_ascii_case("cpu") => Ok(()),
        Some(v) => Err(Error::invalid(format!(
            "{DEVICE_VAR}={v}: this build only runs on the cpu device"
        ))),
    }
}

/// Runs one parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    check_device(std::env::var(DEVICE_VAR).ok().as_deref())?;
    let seed = cli.seed;
    let report = match cli.command {
        Command::MakeData(a) => make_data(&a, seed.unwrap_or(0))?,
        Command::Train(a) => train(&a, seed)?.summary(),
        Command::Restore(a) => restore(&a, seed.unwrap_or(0))?,
        Command::Eval(a) => evaluate_pairs(&a.pred, &a.gt, a.y_channel)?.to_csv(),
        Command::AblateSteps(a) => format_ablation(&ablate_steps(&a, seed.unwrap_or(0))?),
    };
    out.write_all(report.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

pub fn make_data(args: &MakeDataArgs, seed: u64) -> Result<String> {
    let kind = Degradation::parse(&args.kind, &args.params)?;
    let clean: Vec<(String, Image)> = match (&args.src, args.synthetic) {
        (Some(src), _) => {
            let files = list_images(src)?;
            if files.is_empty() {
                return Err(Error::Dataset(format!("no images in {}", src.display())));
            }
            files
                .into_iter()
                .map(|(name, path)| {
                    let id = Path::new(&name).file_stem().map_or(name.clone(), |s| s.to_string_lossy().into_owned());
                    Ok((id, Image::load(&path)?))
                })
                .collect::<Result<_>>()?
        }
        (None, Some(n)) if n > 0 && args.size > 0 => (0..n)
            .map(|i| (format!("{i:04}"), synth_clean(args.size, args.size, seed.wrapping_add(i as u64))))
            .collect(),
        _ => return Err(Error::invalid("need --src DIR or a positive --synthetic count and --size")),
    };
    let pairs = write_corpus(&args.out, &clean, &kind, seed)?;
    Ok(format!("wrote {} pairs ({kind}) to {}\n", pairs.len(), args.out.display()))
}

/// Where training left its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub log: PathBuf,
    pub iterations: usize,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

impl TrainOutcome {
    fn summary(&self) -> String {
        format!(
            "trained {} iterations; log {}; checkpoint {}\n",
            self.iterations,
            self.log.display(),
            self.final_checkpoint.display()
        )
    }
}

fn load_config(args: &TrainArgs, fallback: Option<&RunConfig>, seed: Option<u64>) -> Result<RunConfig> {
    let base = match args.preset {
        Preset::Full => RunConfig::default(),
        Preset::Desk => RunConfig::desk(),
    };
    let mut cfg = match (&args.config, fallback) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::parse_over(base, &text)?
        }
        (None, Some(snap)) => snap.clone(),
        (None, None) => base,
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(d) = &args.data {
        cfg.train_dir = d.display().to_string();
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.display().to_string();
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    Ok(cfg)
}

fn eval_line(model: &DftModel<f32>, cfg: &RunConfig, pairs: &[ImagePair], iter: usize) -> Result<String> {
    let sched = cfg.schedule()?;
    let r = evaluate_restoration(model, pairs, cfg.eval_steps, &sched, cfg.seed, cfg.y_channel)?;
    Ok(format!("eval iter={iter} psnr={:.6} ssim={:.6}", r.mean_psnr, r.mean_ssim))
}

pub fn checkpoint_path(dir: &Path, stage: Stage, iter: usize) -> PathBuf {
    dir.join(format!("{stage}-{iter:07}.ckpt"))
}

pub fn train(args: &TrainArgs, seed: Option<u64>) -> Result<TrainOutcome> {
    let stage = args.stage;
    let (cfg, model, state, init) = if let Some(path) = &args.resume {
        let snap = Snapshot::load(path)?;
        let state = snap
            .state
            .clone()
            .ok_or_else(|| Error::Checkpoint(format!("{} holds no trainer state to resume", path.display())))?;
        let cfg = load_config(args, Some(&snap.config), seed)?;
        if cfg.model != snap.config.model {
            return Err(Error::Checkpoint("config model differs from the resumed checkpoint".into()));
        }
        (cfg, snap.model()?, Some(state), Init::Checkpoint)
    } else if let Some(path) = &args.init {
        let snap = Snapshot::load(path)?;
        if let Some(st) = &snap.state {
            if st.stage != Stage::Coarse {
                log::warn!("{} comes from a {} run, not a coarse one", path.display(), st.stage);
            }
        }
        let cfg = load_config(args, Some(&snap.config), seed)?;
        if cfg.model != snap.config.model {
            return Err(Error::Checkpoint("config model differs from the init checkpoint".into()));
        }
        (cfg, snap.model()?, None, Init::Checkpoint)
    } else {
        if stage == Stage::Fine {
            return Err(Error::MissingCoarseInit);
        }
        let cfg = load_config(args, None, seed)?;
        let model = DftModel::new(&cfg.model, cfg.seed)?;
        (cfg, model, None, Init::Scratch)
    };
    let pairs = ingest_corpus(Path::new(&cfg.train_dir))?;
    let eval_pairs = if cfg.eval_dir.is_empty() {
        Vec::new()
    } else {
        ingest_corpus(Path::new(&cfg.eval_dir))?
    };
    let out_dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let log_path = out_dir.join(format!("{stage}.log"));
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(state.is_some())
        .truncate(state.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut emit = |line: &str| -> Result<()> {
        log::info!("{line}");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))
    };

    let mut trainer = Trainer::new(model, cfg.schedule()?, cfg.train_plan(stage)?, pairs.len(), init)?;
    if let Some(state) = state {
        trainer.restore_state(state)?;
    }
    if !eval_pairs.is_empty() {
        emit(&eval_line(trainer.model(), &cfg, &eval_pairs, trainer.iteration())?)?;
    }
    let save = |trainer: &Trainer<f32>| -> Result<PathBuf> {
        let path = checkpoint_path(&out_dir, stage, trainer.iteration());
        Snapshot::of_model(&cfg, trainer.model(), Some(trainer.state())).save(&path)?;
        Ok(path)
    };
    let (mut first_loss, mut last_loss) = (None, None);
    let total = trainer.plan().total_iters;
    while !trainer.is_finished() {
        let report = trainer.step(&pairs)?;
        first_loss.get_or_insert(report.loss);
        last_loss = Some(report.loss);
        let done = report.iter + 1;
        if report.iter % cfg.log_every == 0 || done == total {
            emit(&report.to_string())?;
        }
        if done % cfg.checkpoint_every == 0 && done != total {
            save(&trainer)?;
            if !eval_pairs.is_empty() {
                emit(&eval_line(trainer.model(), &cfg, &eval_pairs, done)?)?;
            }
        }
    }
    let final_checkpoint = save(&trainer)?;
    let last = out_dir.join(format!("{stage}-final.ckpt"));
    fs::copy(&final_checkpoint, &last).map_err(|e| Error::io(&last, e))?;
    if !eval_pairs.is_empty() {
        emit(&eval_line(trainer.model(), &cfg, &eval_pairs, total)?)?;
    }
    Ok(TrainOutcome {
        final_checkpoint,
        log: log_path,
        iterations: trainer.iteration(),
        first_loss,
        last_loss,
    })
}

pub fn restore(args: &RestoreArgs, seed: u64) -> Result<String> {
    let snap = Snapshot::load(&args.ckpt)?;
    let model = snap.model()?;
    let sched = snap.config.schedule()?;
    let files = list_images(&args.input)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", args.input.display())));
    }
    fs::create_dir_all(&args.output).map_err(|e| Error::io(&args.output, e))?;
    if let Some(dir) = &args.debug_steps {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for (i, (name, path)) in files.iter().enumerate() {
        let stem = Path::new(name).file_stem().map_or(name.clone(), |s| s.to_string_lossy().into_owned());
        let degraded = Image::load(path)?;
        let mut failure = None;
        let restored = restore_image_with(&model, &degraded, args.steps, &sched, image_seed(seed, i), |t, x| {
            if let (Some(dir), None) = (&args.debug_steps, &failure) {
                let mut x = x.clone();
                x.clamp01();
                if let Err(e) = x.save_png(&dir.join(format!("{stem}_t{t:04}.png"))) {
                    failure = Some(e);
                }
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        restored.save_png(&args.output.join(format!("{stem}.png")))?;
    }
    Ok(format!("restored {} images into {}\n", files.len(), args.output.display()))
}

/// One row of a step-count ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub steps: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub seconds: f64,
}

pub fn parse_steps(text: &str) -> Result<Vec<usize>> {
    let steps = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad step count `{}`", s.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = steps.iter().find(|&&s| s < 2) {
        return Err(Error::invalid(format!("step count {s} is below the minimum of 2")));
    }
    Ok(steps)
}

/// Restores the corpus once per step count. Scores are computed on the
/// 8-bit images `restore` would write, so each row matches a
/// `restore` + `eval` run with the same seed.
const TIMING_REPEATS: usize = 3;

pub fn ablate_steps(args: &AblateArgs, seed: u64) -> Result<Vec<AblationRow>> {
    let steps = parse_steps(&args.steps)?;
    let snap = Snapshot::load(&args.ckpt)?;
    let model = snap.model()?;
    let sched = snap.config.schedule()?;
    let y_channel = snap.config.y_channel && !args.rgb;
    let pairs = ingest_corpus(&args.corpus)?;
    let mut rows = Vec::new();
    for s in steps {
        // best of a few seeded repeats; a single run picks up scheduler noise
        let mut seconds = f64::INFINITY;
        let mut restored = Vec::new();
        for _ in 0..TIMING_REPEATS {
            let start = Instant::now();
            restored = restore_pairs(&model, &pairs, s, &sched, seed)?;
            seconds = seconds.min(start.elapsed().as_secs_f64());
        }
        let restored: Vec<Image> = restored.iter().map(Image::quantized).collect();
        let report: EvalReport = evaluate_images(
            pairs.iter().zip(&restored).map(|(p, r)| (p.id.as_str(), r, &p.clean)),
            y_channel,
        )?;
        rows.push(AblationRow {
            steps: s,
            psnr: report.mean_psnr,
            ssim: report.mean_ssim,
            seconds,
        });
    }
    Ok(rows)
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from("steps,psnr_db,ssim,seconds\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.3}", r.steps, r.psnr, r.ssim, r.seconds);
    }
    out
}
