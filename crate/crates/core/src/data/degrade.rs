//! Seeded synthetic degradations and procedural clean images.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use super::image::Image;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Streak parameters; ranges are sampled once per image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainParams {
    /// Fraction of pixels seeding a streak.
    pub density: f64,
    pub length: (usize, usize),
    /// Streaks lean up to this many degrees either side of vertical.
    pub max_angle_deg: f64,
    pub intensity: (f64, f64),
}

impl Default for RainParams {
    fn default() -> Self {
        Self {
            density: 0.02,
            length: (9, 15),
            max_angle_deg: 20.0,
            intensity: (0.3, 0.8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlurKernel {
    /// Isotropic Gaussian; `sigma = 0` is the identity.
    Gaussian { sigma: f64 },
    /// Uniform line of `length` pixels at a seeded angle; length 1 is the identity.
    Motion { length: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Degradation {
    Rain(RainParams),
    Blur(BlurKernel),
    Noise { sigma: f64 },
}

impl Degradation {
    /// Parses a kind name and a `key=value,key=value` parameter list.
    ///
    /// Rain keys: `density`, `length_min`, `length_max`, `angle`,
    /// `intensity_min`, `intensity_max`. Blur keys: `sigma` or `motion`.
    /// Noise keys: `sigma`.
    pub fn parse(kind: &str, params: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("degradation parameter `{item}` is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("degradation parameter `{item}` is not numeric")))?;
            pairs.push((k.trim().to_string(), v));
        }
        let unknown = |k: &str| Error::invalid(format!("unknown {kind} parameter `{k}`"));
        let count = |v: f64, k: &str| -> Result<usize> {
            if v < 1.0 || v.fract() != 0.0 {
                return Err(Error::invalid(format!("{k} must be a positive integer, got {v}")));
            }
            Ok(v as usize)
        };
        let d = match kind {
            "rain" => {
                let mut p = RainParams::default();
                for (k, v) in &pairs {
                    match k.as_str() {
                        "density" => p.density = *v,
                        "length_min" => p.length.0 = count(*v, k)?,
                        "length_max" => p.length.1 = count(*v, k)?,
                        "angle" => p.max_angle_deg = *v,
                        "intensity_min" => p.intensity.0 = *v,
                        "intensity_max" => p.intensity.1 = *v,
                        _ => return Err(unknown(k)),
                    }
                }
                Degradation::Rain(p)
            }
            "blur" => match pairs.as_slice() {
                [] => Degradation::Blur(BlurKernel::Gaussian { sigma: 1.5 }),
                [(k, v)] if k == "sigma" => Degradation::Blur(BlurKernel::Gaussian { sigma: *v }),
                [(k, v)] if k == "motion" => Degradation::Blur(BlurKernel::Motion { length: count(*v, k)? }),
                _ => return Err(Error::invalid("blur takes exactly one of sigma=<s> or motion=<length>")),
            },
            "noise" => {
                let mut sigma = 0.1;
                for (k, v) in &pairs {
                    match k.as_str() {
                        "sigma" => sigma = *v,
                        _ => return Err(unknown(k)),
                    }
                }
                Degradation::Noise { sigma }
            }
            other => return Err(Error::invalid(format!("unknown degradation kind `{other}` (rain, blur, noise)"))),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        match *self {
            Degradation::Rain(p) => {
                if !(0.0..=1.0).contains(&p.density) {
                    return bad(format!("rain density {} outside [0, 1]", p.density));
                }
                if p.length.0 == 0 || p.length.0 > p.length.1 {
                    return bad(format!("rain length range {:?} is empty", p.length));
                }
                if !(0.0..=90.0).contains(&p.max_angle_deg) {
                    return bad(format!("rain angle {} outside [0, 90]", p.max_angle_deg));
                }
                let (lo, hi) = p.intensity;
                if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                    return bad(format!("rain intensity range ({lo}, {hi}) must lie in [0, 1]"));
                }
            }
            Degradation::Blur(BlurKernel::Gaussian { sigma }) if !(sigma >= 0.0 && sigma <= 20.0) => {
                return bad(format!("blur sigma {sigma} outside [0, 20]"));
            }
            Degradation::Blur(BlurKernel::Motion { length }) if length == 0 || length > 64 => {
                return bad(format!("motion length {length} outside [1, 64]"));
            }
            Degradation::Noise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return bad(format!("noise sigma {sigma} must be finite and >= 0"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Degradation::Rain(_) => "rain",
            Degradation::Blur(_) => "blur",
            Degradation::Noise { .. } => "noise",
        }
    }
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degradation::Rain(p) => write!(
                f,
                "rain density={} length_min={} length_max={} angle={} intensity_min={} intensity_max={}",
                p.density, p.length.0, p.length.1, p.max_angle_deg, p.intensity.0, p.intensity.1
            ),
            Degradation::Blur(BlurKernel::Gaussian { sigma }) => write!(f, "blur sigma={sigma}"),
            Degradation::Blur(BlurKernel::Motion { length }) => write!(f, "blur motion={length}"),
            Degradation::Noise { sigma } => write!(f, "noise sigma={sigma}"),
        }
    }
}

/// Square 2-D kernel, row-major.
#[derive(Debug, Clone, PartialEq)]
struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    fn gaussian(sigma: f64) -> Self {
        if sigma == 0.0 {
            return Self { size: 1, taps: vec![1.0] };
        }
        let r = (3.0 * sigma).ceil() as isize;
        let size = (2 * r + 1) as usize;
        let mut taps = Vec::with_capacity(size * size);
        for y in -r..=r {
            for x in -r..=r {
                taps.push((-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp());
            }
        }
        let mut k = Self { size, taps };
        k.normalize_sum();
        k
    }

    /// Rasterized line segment through the center. `angle` is measured from
    /// the vertical axis.
    fn line(length: usize, angle: f64) -> Self {
        let size = length | 1;
        let c = (size / 2) as f64;
        let mut taps = vec![0.0; size * size];
        let samples = 8 * length;
        let half = (length as f64 - 1.0) / 2.0;
        for s in 0..samples.max(1) {
            let u = if samples > 1 {
                -half + 2.0 * half * s as f64 / (samples - 1) as f64
            } else {
                0.0
            };
            let x = (c + u * angle.sin()).round() as usize;
            let y = (c + u * angle.cos()).round() as usize;
            taps[y.min(size - 1) * size + x.min(size - 1)] += 1.0;
        }
        Self { size, taps }
    }

    fn normalize_sum(&mut self) {
        let s: f64 = self.taps.iter().sum();
        self.taps.iter_mut().for_each(|v| *v /= s);
    }

    fn normalize_max(&mut self) {
        let m = self.taps.iter().cloned().fold(0.0, f64::max);
        self.taps.iter_mut().for_each(|v| *v /= m);
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    if r < n as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Correlates one `h x w` plane with `k` under mirror padding.
fn filter_plane(plane: &[f64], h: usize, w: usize, k: &Kernel) -> Vec<f64> {
    if k.size == 1 {
        return plane.iter().map(|v| v * k.taps[0]).collect();
    }
    let r = (k.size / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..k.size {
                let sy = reflect(y as isize + ky as isize - r, h);
                let row = &plane[sy * w..(sy + 1) * w];
                for kx in 0..k.size {
                    let t = k.taps[ky * k.size + kx];
                    if t != 0.0 {
                        acc += t * row[reflect(x as isize + kx as isize - r, w)];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Applies `kind` to a clean image. The output is a pure function of
/// `(x, kind, seed)` and lies in `[0, 1]`.
pub fn synth_degrade(x: &Image, kind: &Degradation, seed: u64) -> Result<Image> {
    kind.validate()?;
    let mut rng = seeded(seed);
    let (c, h, w) = x.dims();
    let mut out = match *kind {
        Degradation::Noise { sigma } => {
            let data = x
                .data()
                .iter()
                .map(|&v| (f64::from(v) + sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();
            Image::new(c, h, w, data)?
        }
        Degradation::Blur(kernel) => {
            let k = match kernel {
                BlurKernel::Gaussian { sigma } => Kernel::gaussian(sigma),
                BlurKernel::Motion { length } => {
                    let mut k = Kernel::line(length, rng.random_range(0.0..PI));
                    k.normalize_sum();
                    k
                }
            };
            let mut data = Vec::with_capacity(c * h * w);
            for ch in 0..c {
                let plane: Vec<f64> = x.plane(ch).iter().map(|&v| f64::from(v)).collect();
                data.extend(filter_plane(&plane, h, w, &k).into_iter().map(|v| v as f32));
            }
            Image::new(c, h, w, data)?
        }
        Degradation::Rain(p) => {
            let length = rng.random_range(p.length.0..=p.length.1);
            let angle = rng.random_range(-p.max_angle_deg..=p.max_angle_deg).to_radians();
            let intensity = rng.random_range(p.intensity.0..=p.intensity.1);
            let impulses: Vec<f64> = (0..h * w)
                .map(|_| if rng.random_bool(p.density) { 1.0 } else { 0.0 })
                .collect();
            let mut k = Kernel::line(length, angle);
            k.normalize_max();
            let streaks: Vec<f64> = filter_plane(&impulses, h, w, &k)
                .into_iter()
                .map(|v| intensity * v.min(1.0))
                .collect();
            Image::from_fn(c, h, w, |ch, y, xx| x.get(ch, y, xx) + streaks[y * w + xx] as f32)
        }
    };
    out.clamp01();
    Ok(out)
}

/// Procedural clean image: a two-tone gradient backdrop with a handful of
/// flat disks and rectangles and a faint sinusoidal texture.
pub fn synth_clean(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = seeded(seed);
    let color = |rng: &mut crate::rng::StdRng| -> [f64; 3] { std::array::from_fn(|_| rng.random_range(0.05..0.95)) };
    let from = color(&mut rng);
    let to = color(&mut rng);
    let theta: f64 = rng.random_range(0.0..2.0 * PI);
    let (gx, gy) = (theta.cos(), theta.sin());

    enum Shape {
        Disk { cy: f64, cx: f64, r: f64 },
        Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    }
    let n_shapes = rng.random_range(3..=6);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let size = rng.random_range(0.1..0.35) * height.min(width) as f64;
        let shape = if rng.random_bool(0.5) {
            Shape::Disk { cy, cx, r: size }
        } else {
            let aspect = rng.random_range(0.5..2.0);
            Shape::Rect {
                y0: cy - size,
                x0: cx - size * aspect,
                y1: cy + size,
                x1: cx + size * aspect,
            }
        };
        shapes.push((shape, color(&mut rng)));
    }
    let freq: f64 = rng.random_range(0.2..0.8);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let amp: f64 = rng.random_range(0.02..0.06);

    let (hf, wf) = (height.max(2) as f64 - 1.0, width.max(2) as f64 - 1.0);
    Image::from_fn(3, height, width, |c, y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let s = ((xf / wf - 0.5) * gx + (yf / hf - 0.5) * gy + 0.5).clamp(0.0, 1.0);
        let mut v = from[c] * (1.0 - s) + to[c] * s;
        for (shape, col) in &shapes {
            let inside = match *shape {
                Shape::Disk { cy, cx, r } => (yf - cy).powi(2) + (xf - cx).powi(2) <= r * r,
                Shape::Rect { y0, x0, y1, x1 } => (y0..=y1).contains(&yf) && (x0..=x1).contains(&xf),
            };
            if inside {
                v = col[c];
            }
        }
        v += amp * (freq * (xf + 0.7 * yf) + phase).sin();
        v.clamp(0.0, 1.0) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, v: f32) -> Image {
        Image::filled(3, h, w, v)
    }

    #[test]
    fn zero_noise_is_identity() {
        let x = synth_clean(16, 16, 1);
        assert_eq!(synth_degrade(&x, &Degradation::Noise { sigma: 0.0 }, 5).unwrap(), x);
    }

    #[test]
    fn identity_blur_kernels() {
        let x = synth_clean(12, 20, 2);
        for k in [BlurKernel::Gaussian { sigma: 0.0 }, BlurKernel::Motion { length: 1 }] {
            assert_eq!(synth_degrade(&x, &Degradation::Blur(k), 3).unwrap(), x);
        }
    }

    #[test]
    fn noise_std_matches_sigma() {
        let x = gray(96, 96, 0.5);
        let y = synth_degrade(&x, &Degradation::Noise { sigma: 0.1 }, 11).unwrap();
        let d: Vec<f64> = y.data().iter().zip(x.data()).map(|(a, b)| f64::from(a - b)).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((std - 0.1).abs() < 0.005, "std {std}");
    }

    #[test]
    fn negative_sigma_rejected() {
        let x = gray(8, 8, 0.5);
        assert!(synth_degrade(&x, &Degradation::Noise { sigma: -0.1 }, 0).is_err());
        assert!(Degradation::parse("noise", "sigma=-1").is_err());
        assert!(Degradation::parse("blur", "sigma=1,motion=3").is_err());
        assert!(Degradation::parse("rain", "wind=2").is_err());
        assert!(Degradation::parse("haze", "").is_err());
    }

    #[test]
    fn parse_and_display_roundtrip() {
        for (kind, params) in [("rain", ""), ("rain", "density=0.05,angle=10"), ("blur", "motion=7"), ("blur", "sigma=2"), ("noise", "sigma=0.25")] {
            let d = Degradation::parse(kind, params).unwrap();
            let text = d.to_string();
            let (k, rest) = text.split_once(' ').unwrap();
            let back = Degradation::parse(k, &rest.replace(' ', ",")).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn degradations_are_seeded_and_in_range() {
        let x = synth_clean(32, 32, 4);
        for d in [
            Degradation::Rain(RainParams::default()),
            Degradation::Blur(BlurKernel::Motion { length: 9 }),
            Degradation::Blur(BlurKernel::Gaussian { sigma: 1.2 }),
            Degradation::Noise { sigma: 0.3 },
        ] {
            let a = synth_degrade(&x, &d, 7).unwrap();
            assert_eq!(a, synth_degrade(&x, &d, 7).unwrap());
            assert_ne!(a, x, "{d}");
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rain_only_brightens_and_leaves_most_pixels() {
        let x = gray(64, 64, 0.2);
        let y = synth_degrade(&x, &Degradation::Rain(RainParams::default()), 9).unwrap();
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| a >= b));
        let touched = y.plane(0).iter().filter(|&&v| v > 0.2).count() as f64 / 4096.0;
        assert!(touched > 0.05 && touched < 0.6, "coverage {touched}");
        // streaks are gray: every channel gets the same layer
        assert_eq!(y.plane(0), y.plane(2));
    }

    #[test]
    fn blur_preserves_constant_images_and_mean() {
        let x = gray(20, 20, 0.4);
        let y = synth_degrade(&x, &Degradation::Blur(BlurKernel::Gaussian { sigma: 2.0 }), 0).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.4).abs() < 1e-6));
        let k = Kernel::line(9, 0.3);
        assert!(k.taps.iter().filter(|&&t| t > 0.0).count() >= 9);
    }

    #[test]
    fn clean_images_vary_with_seed() {
        let a = synth_clean(24, 40, 1);
        assert_eq!(a.dims(), (3, 24, 40));
        assert_eq!(a, synth_clean(24, 40, 1));
        assert_ne!(a, synth_clean(24, 40, 2));
    }
}
