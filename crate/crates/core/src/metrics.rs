//! PSNR, SSIM and BT.601 luma, plus directory-level evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use c2f_autograd::{Float, Tensor};

use crate::data::{paired_files, Image};
use crate::error::{Error, Result};

const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Separable Gaussian SSIM window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimWindow {
    pub size: usize,
    pub sigma: f64,
}

impl Default for SsimWindow {
    fn default() -> Self {
        Self { size: 11, sigma: 1.5 }
    }
}

impl SsimWindow {
    /// Normalized 1-D taps.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.size as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.size)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Studio-swing BT.601 luma of one RGB triple, each component clipped to `[0, 1]`.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    let (r, g, b) = (r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
    (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
}

/// Luma plane of an RGB image, rounded to single precision.
pub fn rgb_to_y(img: &Image) -> Result<Image> {
    let y = planes(img, true)?;
    Image::new(1, img.height(), img.width(), y.data().iter().map(|&v| v as f32).collect())
}

/// `(1, C, H, W)` double-precision planes, or the `(1, 1, H, W)` luma plane.
fn planes(img: &Image, y_channel: bool) -> Result<Tensor<f64>> {
    if !y_channel {
        return Ok(img.to_tensor());
    }
    if img.channels() != 3 {
        return Err(Error::Shape(format!("luma needs 3 channels, got {}", img.channels())));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..r.len())
        .map(|i| luma(f64::from(r[i]), f64::from(g[i]), f64::from(b[i])))
        .collect();
    Ok(Tensor::from_vec(data, &[1, 1, img.height(), img.width()]))
}

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("comparing {:?} with {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for unit peak; `+inf` when identical.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    psnr_tensor(&a.to_tensor(), &b.to_tensor())
}

pub fn psnr_tensor(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("psnr of {:?} and {:?}", a.shape(), b.shape())));
    }
    let sse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    let mse = sse / a.numel() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean SSIM over every valid window position, channel and batch element of
/// two `(B, C, H, W)` tensors. Differentiable in both arguments.
pub fn ssim_tensor<T: Float>(a: &Tensor<T>, b: &Tensor<T>, window: &SsimWindow) -> Result<Tensor<T>> {
    if a.shape() != b.shape() || a.rank() != 4 {
        return Err(Error::Shape(format!("ssim of {:?} and {:?}", a.shape(), b.shape())));
    }
    let (_, _, h, w) = a.dims4();
    if h < window.size || w < window.size {
        return Err(Error::Shape(format!(
            "{h}x{w} image is smaller than the {0}x{0} SSIM window",
            window.size
        )));
    }
    let taps = window.taps();
    let blur = |t: &Tensor<T>| t.filter_valid(2, &taps).filter_valid(3, &taps);
    let (mu_a, mu_b) = (blur(a), blur(b));
    let (mu_aa, mu_bb, mu_ab) = (mu_a.sqr(), mu_b.sqr(), &mu_a * &mu_b);
    let var_a = blur(&a.sqr()) - &mu_aa;
    let var_b = blur(&b.sqr()) - &mu_bb;
    let cov = blur(&(a * b)) - &mu_ab;
    let (c1, c2) = (K1 * K1, K2 * K2);
    let num = mu_ab.affine(2.0, c1) * cov.affine(2.0, c2);
    let den = (mu_aa + mu_bb).add_scalar(c1) * (var_a + var_b).add_scalar(c2);
    Ok((num / den).mean_all())
}

/// SSIM of two images with the default 11x11, sigma 1.5 window, averaged over
/// channels. Computed in double precision.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, &SsimWindow::default())
}

pub fn ssim_with(a: &Image, b: &Image, window: &SsimWindow) -> Result<f64> {
    same_dims(a, b)?;
    Ok(ssim_tensor(&a.to_tensor::<f64>(), &b.to_tensor::<f64>(), window)?.item())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub filename: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores and their means. Infinite PSNR rows are left out of
/// the PSNR mean; the mean is `+inf` only when every row is infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let finite: Vec<f64> = rows.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
        let skipped = rows.len() - finite.len();
        if skipped > 0 {
            log::warn!("{skipped} of {} images match exactly (PSNR inf); left out of the PSNR mean", rows.len());
        }
        let mean_psnr = match (finite.len(), rows.len()) {
            (_, 0) => f64::NAN,
            (0, _) => f64::INFINITY,
            (n, _) => finite.iter().sum::<f64>() / n as f64,
        };
        let mean_ssim = if rows.is_empty() {
            f64::NAN
        } else {
            rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64
        };
        Self {
            rows,
            mean_psnr,
            mean_ssim,
        }
    }

    /// `filename,psnr_db,ssim` with a closing `MEAN` row.
    pub fn to_csv(&self) -> String {
        let fmt_psnr = |p: f64| if p == f64::INFINITY { "inf".to_string() } else { format!("{p:.8}") };
        let mut out = String::from("filename,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.8}", r.filename, fmt_psnr(r.psnr), r.ssim);
        }
        let _ = writeln!(out, "MEAN,{},{:.8}", fmt_psnr(self.mean_psnr), self.mean_ssim);
        out
    }
}

/// Scores `(name, prediction, ground truth)` triples.
pub fn evaluate_images<'a>(items: impl IntoIterator<Item = (&'a str, &'a Image, &'a Image)>, y_channel: bool) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for (name, pred, gt) in items {
        if pred.dims() != gt.dims() {
            return Err(Error::Shape(format!(
                "{name}: prediction {:?} vs ground truth {:?}",
                pred.dims(),
                gt.dims()
            )));
        }
        let (p, g) = (planes(pred, y_channel)?, planes(gt, y_channel)?);
        rows.push(EvalRow {
            filename: name.to_string(),
            psnr: psnr_tensor(&p, &g)?,
            ssim: ssim_tensor(&p, &g, &SsimWindow::default())?.item(),
        });
    }
    Ok(EvalReport::from_rows(rows))
}

/// Scores every same-named image pair of two directories.
pub fn evaluate_pairs(pred_dir: &Path, gt_dir: &Path, y_channel: bool) -> Result<EvalReport> {
    let mut loaded = Vec::new();
    for (name, p, g) in paired_files(pred_dir, gt_dir)? {
        loaded.push((name, Image::load(&p)?, Image::load(&g)?));
    }
    evaluate_images(loaded.iter().map(|(n, p, g)| (n.as_str(), p, g)), y_channel)
}

#[cfg(test)]
mod tests {
    use c2f_autograd::gradcheck;
    use proptest::prelude::*;

    use super::*;
    use crate::data::synth_clean;

    fn lcg_image(seed: u64, c: usize, h: usize, w: usize) -> Image {
        let data = gradcheck::values(seed, c * h * w).into_iter().map(|v| ((v + 1.0) / 2.0) as f32).collect();
        Image::new(c, h, w, data).unwrap()
    }

    fn offset(img: &Image, d: f32) -> Image {
        Image::from_fn(img.channels(), img.height(), img.width(), |c, y, x| img.get(c, y, x) + d)
    }

    #[test]
    fn luma_endpoints() {
        assert!((luma(1.0, 1.0, 1.0) - 235.0 / 255.0).abs() < 1e-12);
        assert!((luma(0.0, 0.0, 0.0) - 16.0 / 255.0).abs() < 1e-12);
        let y = |v: f32| rgb_to_y(&Image::filled(3, 1, 1, v)).unwrap().get(0, 0, 0) as f64;
        assert!((y(1.0) - 235.0 / 255.0).abs() < 1e-7);
        assert!((y(0.0) - 16.0 / 255.0).abs() < 1e-7);
        assert!((y(0.5) - 125.5 / 255.0).abs() < 1e-7);
        // clipped, not rejected
        assert_eq!(y(1.7), y(1.0));
        assert!(rgb_to_y(&Image::filled(1, 2, 2, 0.3)).is_err());
    }

    #[test]
    fn psnr_cases() {
        let a = Image::filled(3, 8, 8, 0.4);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(3, 8, 8, 0.5);
        // f32 inputs: 0.5 - 0.4 is 0.1 only to single precision
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&a, &Image::filled(3, 8, 9, 0.5)).is_err());
    }

    #[test]
    fn ssim_identity_inverse_and_size() {
        let a = synth_clean(32, 32, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = Image::from_fn(3, 32, 32, |c, y, x| 1.0 - a.get(c, y, x));
        assert!(ssim(&a, &inv).unwrap() < 0.1);
        let small = Image::filled(3, 10, 32, 0.5);
        assert!(ssim(&small, &small).is_err());
        let w7 = SsimWindow { size: 7, sigma: 1.5 };
        assert!(ssim_with(&small, &small, &w7).is_ok());
    }

    #[test]
    fn window_taps_sum_to_one_and_are_symmetric() {
        let t = SsimWindow::default().taps();
        assert_eq!(t.len(), 11);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(t[i], t[10 - i]);
        }
    }

    /// Direct 2-D evaluation of the windowed statistics, written without the
    /// separable tensor path.
    fn ssim_naive(a: &Image, b: &Image) -> f64 {
        let taps = SsimWindow::default().taps();
        let (c, h, w) = a.dims();
        let mut total = 0.0;
        let mut count = 0.0;
        for ch in 0..c {
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..11 {
                        for dx in 0..11 {
                            let k = taps[dy] * taps[dx];
                            let (p, q) = (f64::from(a.get(ch, y0 + dy, x0 + dx)), f64::from(b.get(ch, y0 + dy, x0 + dx)));
                            ma += k * p;
                            mb += k * q;
                            saa += k * p * p;
                            sbb += k * q * q;
                            sab += k * p * q;
                        }
                    }
                    let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    let (c1, c2) = (K1 * K1, K2 * K2);
                    total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1.0;
                }
            }
        }
        total / count
    }

    #[test]
    fn separable_ssim_matches_direct_windows() {
        for seed in 0..4 {
            let a = lcg_image(seed, 3, 14, 17);
            let b = lcg_image(seed + 100, 3, 14, 17);
            assert!((ssim(&a, &b).unwrap() - ssim_naive(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let w7 = SsimWindow { size: 7, sigma: 1.5 };
        let a = Tensor::<f64>::from_f64(&gradcheck::values(1, 64).iter().map(|v| 0.5 + 0.4 * v).collect::<Vec<_>>(), &[1, 1, 8, 8]);
        let b = Tensor::<f64>::from_f64(&gradcheck::values(2, 64).iter().map(|v| 0.5 + 0.4 * v).collect::<Vec<_>>(), &[1, 1, 8, 8]);
        let a = Tensor::param(a.to_vec(), a.shape());
        gradcheck::assert_gradients(&[a], |x| ssim_tensor(&x[0], &b, &w7).unwrap().neg().add_scalar(1.0));
    }

    #[test]
    fn report_csv_and_means() {
        let a = lcg_image(1, 3, 12, 12);
        let b = offset(&a, 0.05);
        let report = evaluate_images([("same.png", &a, &a), ("off.png", &a, &b)], false).unwrap();
        assert_eq!(report.rows[0].psnr, f64::INFINITY);
        assert_eq!(report.mean_psnr, report.rows[1].psnr);
        assert!((report.mean_ssim - (1.0 + report.rows[1].ssim) / 2.0).abs() < 1e-15);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "filename,psnr_db,ssim");
        assert!(lines[1].starts_with("same.png,inf,1.0"));
        assert!(lines[3].starts_with("MEAN,"));
        let all_same = evaluate_images([("s.png", &a, &a)], true).unwrap();
        assert_eq!(all_same.mean_psnr, f64::INFINITY);
        assert!((all_same.mean_ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_pairs_rejects_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let (p, g) = (dir.path().join("pred"), dir.path().join("gt"));
        std::fs::create_dir_all(&p).unwrap();
        std::fs::create_dir_all(&g).unwrap();
        let a = synth_clean(16, 16, 1);
        a.save_png(&p.join("a.png")).unwrap();
        a.save_png(&g.join("a.png")).unwrap();
        let r = evaluate_pairs(&p, &g, true).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].psnr, f64::INFINITY);
        a.save_png(&p.join("b.png")).unwrap();
        assert!(evaluate_pairs(&p, &g, true).is_err());
    }

    proptest! {
        #[test]
        fn luma_stays_in_studio_range(r in 0f32..=1.0, g in 0f32..=1.0, b in 0f32..=1.0) {
            let img = Image::new(3, 1, 1, vec![r, g, b]).unwrap();
            let y = f64::from(rgb_to_y(&img).unwrap().get(0, 0, 0));
            prop_assert!(y >= 16.0 / 255.0 - 1e-7 && y <= 235.0 / 255.0 + 1e-7);
        }

        #[test]
        fn ssim_is_symmetric(seed in 0u64..1000) {
            let a = lcg_image(seed, 3, 12, 13);
            let b = lcg_image(seed + 7, 3, 12, 13);
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-7);
        }

        #[test]
        fn psnr_falls_as_offset_grows(seed in 0u64..1000, c in 0.001f32..0.2) {
            // keep values low so the shifted image stays in range
            let base = lcg_image(seed, 3, 8, 8);
            let a = Image::from_fn(3, 8, 8, |ch, y, x| 0.7 * base.get(ch, y, x));
            let near = psnr(&a, &offset(&a, c / 2.0)).unwrap();
            let far = psnr(&a, &offset(&a, c)).unwrap();
            prop_assert!(far < near);
        }
    }
}
