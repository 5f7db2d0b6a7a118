use crate::tensor::numel;
use crate::{Float, Tensor};

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `(B, C, H, W) -> (B, 4C, H/2, W/2)`; channel `4c + 2dy + dx` holds pixel
/// `(2i + dy, 2j + dx)` of channel `c`.
fn unshuffle_raw<T: Float>(x: &[T], b: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![T::zero(); x.len()];
    for n in 0..b {
        for ch in 0..c {
            let src = &x[(n * c + ch) * h * w..][..h * w];
            for dy in 0..2 {
                for dx in 0..2 {
                    let oc = ch * 4 + dy * 2 + dx;
                    let dst = &mut out[(n * 4 * c + oc) * ho * wo..][..ho * wo];
                    for i in 0..ho {
                        let row = &src[(2 * i + dy) * w..][..w];
                        for (j, d) in dst[i * wo..(i + 1) * wo].iter_mut().enumerate() {
                            *d = row[2 * j + dx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`unshuffle_raw`]; `c` is the output channel count.
fn shuffle_raw<T: Float>(x: &[T], b: usize, c: usize, ho: usize, wo: usize) -> Vec<T> {
    let (h, w) = (ho * 2, wo * 2);
    let mut out = vec![T::zero(); x.len()];
    for n in 0..b {
        for ch in 0..c {
            let dst = &mut out[(n * c + ch) * h * w..][..h * w];
            for dy in 0..2 {
                for dx in 0..2 {
                    let ic = ch * 4 + dy * 2 + dx;
                    let src = &x[(n * 4 * c + ic) * ho * wo..][..ho * wo];
                    for i in 0..ho {
                        let row = &mut dst[(2 * i + dy) * w..][..w];
                        for (j, &s) in src[i * wo..(i + 1) * wo].iter().enumerate() {
                            row[2 * j + dx] = s;
                        }
                    }
                }
            }
        }
    }
    out
}

impl<T: Float> Tensor<T> {
    /// Same data, new shape. Panics if the element count differs.
    pub fn reshape(&self, shape: &[usize]) -> Self {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} into {shape:?}",
            self.shape()
        );
        Tensor::from_op_shared(self.data_arc(), shape.to_vec(), vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len() && start + len <= shape[axis], "narrow {axis}:{start}+{len} of {shape:?}");
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&x[(o * n + start) * inner..][..len * inner]);
        }
        let total = self.numel();
        Tensor::from_op(data, out_shape, vec![self.clone()], move |g, _| {
            let mut dx = vec![T::zero(); total];
            for o in 0..outer {
                dx[(o * n + start) * inner..][..len * inner].copy_from_slice(&g[o * len * inner..][..len * inner]);
            }
            vec![Some(dx)]
        })
    }

    /// Concatenation along `axis`; all other dims must agree.
    pub fn cat(parts: &[&Tensor<T>], axis: usize) -> Self {
        assert!(!parts.is_empty(), "cat of nothing");
        let first = parts[0].shape();
        for p in parts {
            let s = p.shape();
            assert!(
                s.len() == first.len()
                    && axis < s.len()
                    && s.iter().zip(first).enumerate().all(|(i, (a, b))| i == axis || a == b),
                "cannot concatenate {s:?} with {first:?} along {axis}"
            );
        }
        let lens: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = lens.iter().sum();
        let mut out_shape = first.to_vec();
        out_shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * l * inner..][..l * inner]);
            }
        }
        let parents = parts.iter().map(|&p| p.clone()).collect();
        Tensor::from_op(data, out_shape, parents, move |g, need| {
            let mut offset = 0;
            lens.iter()
                .zip(need)
                .map(|(&l, &needed)| {
                    let off = offset;
                    offset += l;
                    needed.then(|| {
                        let mut dx = Vec::with_capacity(outer * l * inner);
                        for o in 0..outer {
                            dx.extend_from_slice(&g[(o * total + off) * inner..][..l * inner]);
                        }
                        dx
                    })
                })
                .collect()
        })
    }

    /// Space-to-depth by a factor of two: `(B, C, H, W) -> (B, 4C, H/2, W/2)`.
    pub fn pixel_unshuffle(&self) -> Self {
        let (b, c, h, w) = self.dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "pixel_unshuffle needs even spatial dims, got {h}x{w}");
        let data = unshuffle_raw(self.data(), b, c, h, w);
        Tensor::from_op(data, vec![b, 4 * c, h / 2, w / 2], vec![self.clone()], move |g, _| {
            vec![Some(shuffle_raw(g, b, c, h / 2, w / 2))]
        })
    }

    /// Depth-to-space by a factor of two: `(B, 4C, H, W) -> (B, C, 2H, 2W)`.
    pub fn pixel_shuffle(&self) -> Self {
        let (b, c4, h, w) = self.dims4();
        assert!(c4 % 4 == 0, "pixel_shuffle needs a multiple of 4 channels, got {c4}");
        let c = c4 / 4;
        let data = shuffle_raw(self.data(), b, c, h, w);
        Tensor::from_op(data, vec![b, c, 2 * h, 2 * w], vec![self.clone()], move |g, _| {
            vec![Some(unshuffle_raw(g, b, c, 2 * h, 2 * w))]
        })
    }
}
