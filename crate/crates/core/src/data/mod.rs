//! Paired images: ingestion, synthetic corpora and patch batches.

mod degrade;
mod image;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use c2f_autograd::{Float, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

pub use self::degrade::{synth_clean, synth_degrade, BlurKernel, Degradation, RainParams};
pub use self::image::{stack, Image};
use crate::error::{Error, Result};
use crate::rng::{derive, seeded};

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub clean: Image,
    pub degraded: Image,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, clean: Image, degraded: Image) -> Result<Self> {
        let id = id.into();
        if clean.dims() != degraded.dims() {
            return Err(Error::Dataset(format!(
                "pair {id}: clean is {:?} but degraded is {:?}",
                clean.dims(),
                degraded.dims()
            )));
        }
        Ok(Self { id, clean, degraded })
    }
}

/// `B` aligned patches of side `patch`.
#[derive(Debug, Clone)]
pub struct PatchBatch {
    pub clean: Vec<Image>,
    pub degraded: Vec<Image>,
    pub ids: Vec<String>,
    pub patch: usize,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    /// `(clean, degraded)` as `(B, C, p, p)` tensors.
    pub fn tensors<T: Float>(&self) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((stack(&self.clean)?, stack(&self.degraded)?))
    }
}

/// Image files in `dir` keyed by file name, sorted lexicographically.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            let name = path.file_name().and_then(|n| n.to_str()).map(str::to_owned);
            let name = name.ok_or_else(|| Error::Dataset(format!("non UTF-8 file name in {}", dir.display())))?;
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Matches files by name across two directories. Any file without a
/// counterpart is an error naming every orphan.
pub fn paired_files(left: &Path, right: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let a = list_images(left)?;
    let b = list_images(right)?;
    let orphans: Vec<String> = a
        .iter()
        .filter(|(n, _)| !b.iter().any(|(m, _)| m == n))
        .map(|(n, _)| format!("{} has no counterpart in {}", left.join(n).display(), right.display()))
        .chain(
            b.iter()
                .filter(|(n, _)| !a.iter().any(|(m, _)| m == n))
                .map(|(n, _)| format!("{} has no counterpart in {}", right.join(n).display(), left.display())),
        )
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Dataset(format!("unpaired files: {}", orphans.join("; "))));
    }
    if a.is_empty() {
        log::warn!("no images found in {} and {}", left.display(), right.display());
    }
    Ok(a.into_iter().zip(b).map(|((n, pa), (_, pb))| (n, pa, pb)).collect())
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name)
        .to_string()
}

/// Loads same-named images from the two directories in file-name order.
pub fn ingest_pairs(clean_dir: &Path, degraded_dir: &Path) -> Result<Vec<ImagePair>> {
    paired_files(clean_dir, degraded_dir)?
        .into_iter()
        .map(|(name, c, d)| ImagePair::new(stem(&name), Image::load(&c)?, Image::load(&d)?))
        .collect()
}

/// Loads a corpus laid out as `<root>/clean` and `<root>/degraded`.
pub fn ingest_corpus(root: &Path) -> Result<Vec<ImagePair>> {
    ingest_pairs(&root.join("clean"), &root.join("degraded"))
}

/// Writes `clean` images and their degraded counterparts as 8-bit PNGs under
/// `root`, plus `manifest.txt`. Degradation runs on the already quantized
/// clean image so the stored pair is self-consistent. Returns the pairs as
/// they will decode from disk.
pub fn write_corpus(root: &Path, clean: &[(String, Image)], kind: &Degradation, seed: u64) -> Result<Vec<ImagePair>> {
    if clean.is_empty() {
        return Err(Error::Dataset("no clean images to degrade".into()));
    }
    kind.validate()?;
    let (clean_dir, degraded_dir) = (root.join("clean"), root.join("degraded"));
    for dir in [&clean_dir, &degraded_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut seeds = seeded(seed);
    let mut manifest = format!("# id\tseed\tdegradation\n# corpus seed {seed}\n");
    let mut pairs = Vec::with_capacity(clean.len());
    for (id, img) in clean {
        let x = img.quantized();
        let image_seed = seeds.next_u64();
        let y = synth_degrade(&x, kind, image_seed)?.quantized();
        x.save_png(&clean_dir.join(format!("{id}.png")))?;
        y.save_png(&degraded_dir.join(format!("{id}.png")))?;
        manifest.push_str(&format!("{id}\t{image_seed}\t{kind}\n"));
        pairs.push(ImagePair::new(id.clone(), x, y)?);
    }
    let path = root.join("manifest.txt");
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(manifest.as_bytes()))
        .map_err(|e| Error::io(&path, e))?;
    Ok(pairs)
}

/// Crops the same `p x p` window from both images; with `augment`, a seeded
/// horizontal flip and quarter-turn rotation are applied to both.
pub fn random_patch(pair: &ImagePair, p: usize, augment: bool, rng: &mut impl Rng) -> Result<(Image, Image)> {
    let (_, h, w) = pair.clean.dims();
    if p == 0 || h < p || w < p {
        return Err(Error::Dataset(format!("pair {} is {h}x{w}, smaller than patch {p}", pair.id)));
    }
    let top = rng.random_range(0..=h - p);
    let left = rng.random_range(0..=w - p);
    let mut x = pair.clean.crop(top, left, p, p)?;
    let mut y = pair.degraded.crop(top, left, p, p)?;
    if augment {
        if rng.random_bool(0.5) {
            x = x.flip_horizontal();
            y = y.flip_horizontal();
        }
        for _ in 0..rng.random_range(0..4) {
            x = x.rot90();
            y = y.rot90();
        }
    }
    Ok((x, y))
}

/// Visits pair indices epoch by epoch; each epoch is a permutation that
/// depends only on `(seed, epoch)`.
#[derive(Debug, Clone)]
pub struct EpochOrder {
    seed: u64,
    len: usize,
    position: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl EpochOrder {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Dataset("cannot iterate an empty dataset".into()));
        }
        Ok(Self {
            seed,
            len,
            position: 0,
            cached: None,
        })
    }

    pub fn permutation(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut derive(seed, epoch));
        order
    }

    /// Number of indices handed out so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn seek(&mut self, position: u64) {
        self.position = position;
    }

    pub fn next_index(&mut self) -> usize {
        let n = self.len as u64;
        let (epoch, offset) = (self.position / n, (self.position % n) as usize);
        if self.cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            self.cached = Some((epoch, Self::permutation(self.seed, epoch, self.len)));
        }
        self.position += 1;
        self.cached.as_ref().expect("cached above").1[offset]
    }
}

/// Draws `batch` patches following `order`; crop and augmentation draws come
/// from `rng`.
pub fn sample_batch(
    pairs: &[ImagePair],
    order: &mut EpochOrder,
    patch: usize,
    batch: usize,
    augment: bool,
    rng: &mut impl Rng,
) -> Result<PatchBatch> {
    if patch % 8 != 0 || batch == 0 {
        return Err(Error::invalid(format!(
            "patch {patch} must be a multiple of 8 and batch {batch} positive"
        )));
    }
    let mut out = PatchBatch {
        clean: Vec::with_capacity(batch),
        degraded: Vec::with_capacity(batch),
        ids: Vec::with_capacity(batch),
        patch,
    };
    for _ in 0..batch {
        let pair = &pairs[order.next_index()];
        let (x, y) = random_patch(pair, patch, augment, rng)?;
        out.clean.push(x);
        out.degraded.push(y);
        out.ids.push(pair.id.clone());
    }
    Ok(out)
}
