use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use c2f_dft::data::{list_images, Image};

fn c2fdft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2fdft"))
        .args(args)
        .env_remove("C2FDFT_DEVICE")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = c2fdft(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = c2fdft(args);
    assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("c2fdft: "), "{stderr}");
    stderr
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn make_corpus(dir: &Path, kind: &str, params: &str, n: usize, size: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("{kind}-{seed}"));
    ok(&[
        "make-data",
        "--kind",
        kind,
        "--synthetic",
        &n.to_string(),
        "--size",
        &size.to_string(),
        "--params",
        params,
        "--out",
        s(&out),
        "--seed",
        &seed.to_string(),
    ]);
    out
}

/// Desk config over 16x16 patches so short runs stay fast. Keys set in
/// `extra` replace the defaults here.
fn write_config(dir: &Path, corpus: &Path, out: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{out}.conf"));
    let defaults = [
        format!("data.train_dir = {}", corpus.display()),
        format!("train.out_dir = {}", dir.join(out).display()),
        "coarse.total_iters = 20".into(),
        "coarse.patch_cycle = 16x2".into(),
        "fine.total_iters = 2".into(),
        "fine.patch_cycle = 16x2".into(),
        "train.log_every = 1".into(),
        "train.checkpoint_every = 10".into(),
    ];
    let key = |line: &str| line.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut text: String = defaults
        .iter()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(extra);
    fs::write(&path, text).unwrap();
    path
}

fn train_coarse(dir: &Path, corpus: &Path, out: &str, extra: &str) -> PathBuf {
    let conf = write_config(dir, corpus, out, extra);
    ok(&["train", "--stage", "coarse", "--preset", "desk", "--config", s(&conf)]);
    dir.join(out).join("coarse-final.ckpt")
}

fn read_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    list_images(dir)
        .unwrap()
        .into_iter()
        .map(|(name, p)| (name, fs::read(p).unwrap()))
        .collect()
}

#[test]
fn make_data_writes_pairs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = make_corpus(dir.path(), "noise", "sigma=0.1", 8, 24, 5);
    assert_eq!(list_images(&a.join("clean")).unwrap().len(), 8);
    assert_eq!(list_images(&a.join("degraded")).unwrap().len(), 8);
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    let entries: Vec<&str> = manifest.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(entries.len(), 8);
    assert!(entries.iter().all(|l| l.contains("sigma=0.1") && l.split('\t').nth(1).unwrap().parse::<u64>().is_ok()));

    // same seed, different output directory
    let again = dir.path().join("again");
    fs::create_dir(&again).unwrap();
    let b = make_corpus(&again, "noise", "sigma=0.1", 8, 24, 5);
    assert_eq!(read_bytes(&a.join("degraded")), read_bytes(&b.join("degraded")));
}

#[test]
fn identity_blur_only_quantizes() {
    let dir = tempfile::tempdir().unwrap();
    let root = make_corpus(dir.path(), "blur", "sigma=0", 3, 20, 1);
    for (name, clean) in list_images(&root.join("clean")).unwrap() {
        let c = Image::load(&clean).unwrap();
        let d = Image::load(&root.join("degraded").join(&name)).unwrap();
        let worst = c.data().iter().zip(d.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 0.5 / 255.0, "{name}: {worst}");
    }
}

#[test]
fn make_data_rejects_empty_source_and_bad_params() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let err = fails(&["make-data", "--kind", "noise", "--src", s(&empty), "--out", s(&dir.path().join("o"))]);
    assert!(err.contains("no images"), "{err}");
    let err = fails(&["make-data", "--kind", "noise", "--synthetic", "2", "--params", "sigma=-1", "--out", s(&dir.path().join("o"))]);
    assert!(err.contains("sigma"), "{err}");
}

#[test]
fn make_data_reads_source_images() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    fs::create_dir(&src).unwrap();
    for (i, name) in ["b.png", "a.png"].iter().enumerate() {
        c2f_dft::data::synth_clean(16, 24, i as u64).save_png(&src.join(name)).unwrap();
    }
    let out = dir.path().join("corpus");
    ok(&["make-data", "--kind", "rain", "--src", s(&src), "--out", s(&out), "--seed", "3"]);
    let pairs = c2f_dft::data::ingest_corpus(&out).unwrap();
    assert_eq!(pairs.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    assert_eq!(pairs[0].clean.dims(), (3, 16, 24));
}

#[test]
fn fine_training_requires_a_coarse_checkpoint() {
    let err = fails(&["train", "--stage", "fine"]);
    assert!(err.contains("coarse checkpoint") && err.contains("--init"), "{err}");
}

#[test]
fn config_errors_list_every_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "model.blocks = 4,6\nfine.lambda_ssim = 1.5\nnot.a.key = 3\n").unwrap();
    let err = fails(&["train", "--stage", "coarse", "--config", s(&conf)]);
    for needle in ["model.blocks", "lambda", "not.a.key"] {
        assert!(err.contains(needle), "`{needle}` missing from {err}");
    }
}

#[test]
fn only_the_cpu_device_is_accepted() {
    let out = Command::new(env!("CARGO_BIN_EXE_c2fdft"))
        .args(["eval", "--pred", "x", "--gt", "y"])
        .env("C2FDFT_DEVICE", "cuda:0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("C2FDFT_DEVICE=cuda:0") && stderr.contains("cpu"), "{stderr}");
}

fn loss_lines(log: &Path, from: usize) -> Vec<String> {
    fs::read_to_string(log)
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("iter="))
        .filter(|l| l["iter=".len()..].split(' ').next().unwrap().parse::<usize>().unwrap() >= from)
        .map(str::to_string)
        .collect()
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_corpus(dir.path(), "rain", "", 4, 16, 2);
    train_coarse(dir.path(), &corpus, "full", "");
    let halfway = dir.path().join("full").join("coarse-0000010.ckpt");
    assert!(halfway.exists());

    let conf = write_config(dir.path(), &corpus, "resumed", "");
    ok(&["train", "--stage", "coarse", "--config", s(&conf), "--preset", "desk", "--resume", s(&halfway)]);
    let full = loss_lines(&dir.path().join("full/coarse.log"), 10);
    let resumed = loss_lines(&dir.path().join("resumed/coarse.log"), 10);
    assert_eq!(full.len(), 10);
    assert_eq!(full, resumed);
}

#[test]
fn fine_run_starts_from_the_coarse_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_corpus(dir.path(), "noise", "sigma=0.1", 4, 16, 3);
    let eval = format!("data.eval_dir = {}\n", corpus.display());
    let coarse = train_coarse(dir.path(), &corpus, "coarse", &eval);
    let conf = write_config(dir.path(), &corpus, "fine", &eval);
    ok(&["train", "--stage", "fine", "--preset", "desk", "--config", s(&conf), "--init", s(&coarse)]);
    let evals = |log: &str| -> Vec<String> {
        fs::read_to_string(dir.path().join(log))
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("eval "))
            .map(|l| l.split_once(' ').unwrap().1.split_once(' ').unwrap().1.to_string())
            .collect()
    };
    let coarse_last = evals("coarse/coarse.log").pop().unwrap();
    let fine_first = evals("fine/fine.log")[0].clone();
    assert_eq!(coarse_last, fine_first);
    assert!(dir.path().join("fine/fine-0000002.ckpt").exists());
}

#[test]
fn restore_is_seeded_and_keeps_odd_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_corpus(dir.path(), "noise", "sigma=0.1", 2, 16, 4);
    let ckpt = train_coarse(dir.path(), &corpus, "run", "coarse.total_iters = 2\n");
    let input = dir.path().join("input");
    fs::create_dir(&input).unwrap();
    c2f_dft::data::synth_clean(37, 41, 9).save_png(&input.join("odd.png")).unwrap();
    let restore = |out: &str, seed: &str, debug: Option<&Path>| {
        let out = dir.path().join(out);
        let mut args = vec!["restore", "--ckpt", s(&ckpt), "--input", s(&input), "--output", s(&out), "--seed", seed];
        if let Some(d) = debug {
            args.extend(["--debug-steps", s(d)]);
        }
        ok(&args);
        out
    };
    let debug = dir.path().join("steps");
    let a = restore("a", "1", Some(&debug));
    let b = restore("b", "1", None);
    let c = restore("c", "2", None);
    assert_eq!(read_bytes(&a), read_bytes(&b));
    assert_ne!(read_bytes(&a), read_bytes(&c));
    assert_eq!(Image::load(&a.join("odd.png")).unwrap().dims(), (3, 37, 41));
    let steps: Vec<String> = list_images(&debug).unwrap().into_iter().map(|(n, _)| n).collect();
    assert_eq!(steps, ["odd_t0000.png", "odd_t0001.png", "odd_t0334.png", "odd_t0667.png"]);
    let err = fails(&["restore", "--ckpt", s(&dir.path().join("missing.ckpt")), "--input", s(&input), "--output", s(&a)]);
    assert!(err.contains("missing.ckpt"), "{err}");
}

fn csv_rows(csv: &str) -> Vec<(String, f64, f64)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn eval_reports_rows_and_means() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    fs::create_dir(&pred).unwrap();
    fs::create_dir(&gt).unwrap();
    let base = Image::from_fn(3, 16, 16, |c, y, x| ((40 + 10 * c + 3 * y + 5 * x) as f32) / 255.0);
    base.save_png(&gt.join("same.png")).unwrap();
    base.save_png(&pred.join("same.png")).unwrap();
    let mut shifted = base.clone();
    shifted.data_mut().iter_mut().for_each(|v| *v += 51.0 / 255.0);
    base.save_png(&gt.join("shift.png")).unwrap();
    shifted.save_png(&pred.join("shift.png")).unwrap();

    let rows = csv_rows(&ok(&["eval", "--pred", s(&pred), "--gt", s(&gt)]));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].0, "same.png");
    assert!(rows[0].1.is_infinite() && rows[0].2 == 1.0);
    // a constant 51/255 offset: PSNR = 20 log10(255 / 51)
    let want = 20.0 * (255.0f64 / 51.0).log10();
    assert!((rows[1].1 - want).abs() < 1e-6, "{} vs {want}", rows[1].1);
    let mean = &rows[2];
    assert_eq!(mean.0, "MEAN");
    assert!((mean.1 - rows[1].1).abs() < 1e-7);
    assert!((mean.2 - (rows[0].2 + rows[1].2) / 2.0).abs() < 1e-7);

    fs::copy(gt.join("same.png"), gt.join("orphan.png")).unwrap();
    let err = fails(&["eval", "--pred", s(&pred), "--gt", s(&gt)]);
    assert!(err.contains("orphan"), "{err}");
}

#[test]
fn ablation_rows_match_restore_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_corpus(dir.path(), "noise", "sigma=0.1", 3, 16, 6);
    let ckpt = train_coarse(dir.path(), &corpus, "run", "coarse.total_iters = 4\n");
    let table = ok(&["ablate-steps", "--ckpt", s(&ckpt), "--corpus", s(&corpus), "--steps", "2,10", "--seed", "5"]);
    let rows: Vec<Vec<f64>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1][3] > rows[0][3], "S=10 should take longer: {table}");
    for row in &rows {
        let steps = (row[0] as usize).to_string();
        let out = dir.path().join(format!("restored-{steps}"));
        ok(&["restore", "--ckpt", s(&ckpt), "--input", s(&corpus.join("degraded")), "--output", s(&out), "--steps", &steps, "--seed", "5"]);
        let report = csv_rows(&ok(&["eval", "--pred", s(&out), "--gt", s(&corpus.join("clean")), "--y-channel"]));
        let mean = report.last().unwrap();
        assert!((mean.1 - row[1]).abs() < 1e-5, "S={steps}: {} vs {}", mean.1, row[1]);
        assert!((mean.2 - row[2]).abs() < 1e-5, "S={steps}: {} vs {}", mean.2, row[2]);
    }
    let err = fails(&["ablate-steps", "--ckpt", s(&ckpt), "--corpus", s(&corpus), "--steps", "1,4"]);
    assert!(err.contains("minimum of 2"), "{err}");
}
