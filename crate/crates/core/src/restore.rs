//! Whole-image restoration and scoring on top of the sampler.

use c2f_autograd::Float;
use rand::RngCore;

use crate::data::{Image, ImagePair};
use crate::error::Result;
use crate::metrics::{evaluate_images, EvalReport};
use crate::rng::{derive, gaussian_tensor, seeded};
use crate::sampler::{sample_from, timestep_grid, NoisePredictor};
use crate::schedule::DiffusionSchedule;

/// The network's spatial sides must be multiples of this.
pub const SIDE_MULTIPLE: usize = 8;

/// Noise seed for the `index`-th image of a run seeded with `seed`.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    derive(seed, index as u64).next_u64()
}

/// Restores one degraded image with a `steps`-step sampler. Sides that are
/// not multiples of 8 are mirror-padded and cropped back afterwards. Each
/// intermediate state (padded, unclipped) is passed to `on_step` with its
/// timestep.
pub fn restore_image_with<T: Float>(
    model: &impl NoisePredictor<T>,
    degraded: &Image,
    steps: usize,
    sched: &DiffusionSchedule,
    seed: u64,
    mut on_step: impl FnMut(usize, &Image),
) -> Result<Image> {
    let (_, h, w) = degraded.dims();
    let padded = degraded.reflect_pad_to_multiple(SIDE_MULTIPLE)?;
    let y = padded.to_tensor::<T>();
    let grid = timestep_grid(steps, sched.steps())?;
    let start = gaussian_tensor(&mut seeded(seed), y.shape());
    let out = sample_from(model, &y, start, &grid, sched, false, |t, x| {
        if let Ok(img) = Image::from_tensor(x, 0) {
            on_step(t, &img);
        }
    })?;
    let mut img = Image::from_tensor(&out, 0)?.crop(0, 0, h, w)?;
    img.clamp01();
    Ok(img)
}

pub fn restore_image<T: Float>(
    model: &impl NoisePredictor<T>,
    degraded: &Image,
    steps: usize,
    sched: &DiffusionSchedule,
    seed: u64,
) -> Result<Image> {
    restore_image_with(model, degraded, steps, sched, seed, |_, _| {})
}

/// Restores every pair's degraded image; image `i` uses `image_seed(seed, i)`.
pub fn restore_pairs<T: Float>(
    model: &impl NoisePredictor<T>,
    pairs: &[ImagePair],
    steps: usize,
    sched: &DiffusionSchedule,
    seed: u64,
) -> Result<Vec<Image>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| restore_image(model, &p.degraded, steps, sched, image_seed(seed, i)))
        .collect()
}

/// Scores restorations of `pairs` against their clean images.
pub fn evaluate_restoration<T: Float>(
    model: &impl NoisePredictor<T>,
    pairs: &[ImagePair],
    steps: usize,
    sched: &DiffusionSchedule,
    seed: u64,
    y_channel: bool,
) -> Result<EvalReport> {
    let restored = restore_pairs(model, pairs, steps, sched, seed)?;
    evaluate_images(
        pairs.iter().zip(&restored).map(|(p, r)| (p.id.as_str(), r, &p.clean)),
        y_channel,
    )
}

/// Scores the degraded inputs themselves, the baseline a restorer must beat.
pub fn evaluate_degraded(pairs: &[ImagePair], y_channel: bool) -> Result<EvalReport> {
    evaluate_images(pairs.iter().map(|p| (p.id.as_str(), &p.degraded, &p.clean)), y_channel)
}
