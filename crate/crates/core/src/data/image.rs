use std::path::Path;

use c2f_autograd::{Float, Tensor};

use crate::error::{Error, Result};

/// Planar `(C, H, W)` image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Builds an image from `f(c, y, x)`.
    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    /// Rounds to the 8-bit grid the PNG codec stores.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f32::from(to_u8(*v)) / 255.0;
        }
        out
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({top}, {left}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(self.channels, height, width, |c, y, x| self.get(c, top + y, left + x)))
    }

    /// Mirror-pads bottom and right (edge pixel not repeated) so both sides
    /// become multiples of `m`.
    pub fn reflect_pad_to_multiple(&self, m: usize) -> Result<Self> {
        let h = self.height.div_ceil(m) * m;
        let w = self.width.div_ceil(m) * m;
        if (h > self.height && self.height < 2) || (w > self.width && self.width < 2) {
            return Err(Error::Shape(format!("cannot reflect-pad a {}x{} image", self.height, self.width)));
        }
        let reflect = |i: usize, n: usize| {
            let period = 2 * (n - 1);
            let r = i % period.max(1);
            if r < n {
                r
            } else {
                period - r
            }
        };
        Ok(Self::from_fn(self.channels, h, w, |c, y, x| {
            self.get(c, reflect(y, self.height), reflect(x, self.width))
        }))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.channels, self.height, self.width, |c, y, x| self.get(c, y, self.width - 1 - x))
    }

    /// Rotates a quarter turn counter-clockwise.
    pub fn rot90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        Self::from_fn(self.channels, w, h, |c, y, x| self.get(c, x, w - 1 - y))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = img.as_raw();
        Ok(Self::from_fn(3, h, w, |c, y, x| f32::from(raw[(y * w + x) * 3 + c]) / 255.0))
    }

    /// Writes an 8-bit RGB PNG; values are clipped to `[0, 1]`. Single-channel
    /// images are replicated to gray.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height, self.width);
        let mut raw = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    raw.push(to_u8(self.get(c.min(self.channels - 1), y, x)));
                }
            }
        }
        let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized for the image");
        buf.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// `(1, C, H, W)` constant tensor.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        stack(std::slice::from_ref(self)).expect("one image always stacks")
    }

    /// Batch element `index` of a `(B, C, H, W)` tensor.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, index: usize) -> Result<Self> {
        if t.rank() != 4 || index >= t.dim(0) {
            return Err(Error::Shape(format!("no image {index} in tensor {:?}", t.shape())));
        }
        let (_, c, h, w) = t.dims4();
        let n = c * h * w;
        let data = t.data()[index * n..(index + 1) * n].iter().map(|v| v.as_f64() as f32).collect();
        Self::new(c, h, w, data)
    }
}

fn to_u8(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stacks equally sized images into a `(B, C, H, W)` tensor.
pub fn stack<T: Float>(images: &[Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::invalid("cannot stack zero images"))?;
    let (c, h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.dims() != (c, h, w) {
            return Err(Error::Shape(format!("stacking {:?} with {:?}", img.dims(), first.dims())));
        }
        data.extend(img.data.iter().map(|&v| T::from_f64(f64::from(v))));
    }
    Ok(Tensor::from_vec(data, &[images.len(), c, h, w]))
}
