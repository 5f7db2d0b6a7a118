//! Fused convolution, normalization and attention kernels over NCHW data.

use std::sync::Arc;

use crate::{Float, Tensor};

/// Copies the 3×3 neighbourhoods of one `(C, H, W)` image into a
/// `(C·9, H·W)` matrix, zero outside the image.
fn im2col<T: Float>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let img = &x[ch * hw..][..hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let dst = &mut col[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for i in 0..h {
                    let row = &mut dst[i * w..][..w];
                    let iy = i as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        row.fill(T::zero());
                        continue;
                    }
                    let src = &img[iy as usize * w..][..w];
                    shift_row(src, row, kx);
                }
            }
        }
    }
}

/// `dst[j] = src[j + kx - 1]`, zero past the edges.
fn shift_row<T: Float>(src: &[T], dst: &mut [T], kx: usize) {
    let w = src.len();
    match kx {
        0 => {
            dst[0] = T::zero();
            dst[1..].copy_from_slice(&src[..w - 1]);
        }
        1 => dst.copy_from_slice(src),
        _ => {
            dst[..w - 1].copy_from_slice(&src[1..]);
            dst[w - 1] = T::zero();
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the image gradient.
fn col2im<T: Float>(col: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let img = &mut dx[ch * hw..][..hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let src = &col[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for i in 0..h {
                    let iy = i as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &src[i * w..][..w];
                    let dst = &mut img[iy as usize * w..][..w];
                    // dst[j + kx - 1] += row[j]
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&row[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(row).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&row[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
}

/// `C = A·B (+ C if accumulate)` for dense row-major or transposed operands.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every access.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_row_bias<T: Float>(out: &mut [T], bias: &[T], row_len: usize) {
    for (row, &b) in out.chunks_exact_mut(row_len).zip(bias.iter().cycle()) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn row_sums_into<T: Float>(g: &[T], acc: &mut [T], row_len: usize) {
    let rows = acc.len();
    for (r, row) in g.chunks_exact(row_len).enumerate() {
        acc[r % rows] += row.iter().copied().sum::<T>();
    }
}

impl<T: Float> Tensor<T> {
    /// 1×1 convolution. `weight` holds `C_out · C_in` values in row-major
    /// `(C_out, C_in)` order; `bias` has `C_out`.
    pub fn conv1x1(&self, weight: &Self, bias: &Self) -> Self {
        let (b, c_in, h, w) = self.dims4();
        let c_out = bias.numel();
        assert_eq!(weight.numel(), c_out * c_in, "conv1x1 weight {:?} for {c_in}->{c_out}", weight.shape());
        let hw = h * w;
        let (x, wt) = (self.data_arc(), weight.data_arc());
        let mut out = vec![T::zero(); b * c_out * hw];
        for n in 0..b {
            gemm(c_out, c_in, hw, &wt, false, &x[n * c_in * hw..], false, &mut out[n * c_out * hw..], false);
        }
        add_row_bias(&mut out, bias.data(), hw);
        let parents = vec![self.clone(), weight.clone(), bias.clone()];
        Tensor::from_op(out, vec![b, c_out, h, w], parents, move |g, need| {
            let mut dx = need[0].then(|| vec![T::zero(); b * c_in * hw]);
            let mut dw = need[1].then(|| vec![T::zero(); c_out * c_in]);
            for n in 0..b {
                let gn = &g[n * c_out * hw..][..c_out * hw];
                if let Some(dx) = dx.as_mut() {
                    gemm(c_in, c_out, hw, &wt, true, gn, false, &mut dx[n * c_in * hw..], false);
                }
                if let Some(dw) = dw.as_mut() {
                    gemm(c_out, hw, c_in, gn, false, &x[n * c_in * hw..], true, dw, true);
                }
            }
            let db = need[2].then(|| {
                let mut db = vec![T::zero(); c_out];
                row_sums_into(g, &mut db, hw);
                db
            });
            vec![dx, dw, db]
        })
    }

    /// Dense 3×3 convolution, stride 1, zero padding 1. `weight` is
    /// `(C_out, C_in, 3, 3)`.
    pub fn conv3x3(&self, weight: &Self, bias: &Self) -> Self {
        let (b, c_in, h, w) = self.dims4();
        let c_out = bias.numel();
        assert_eq!(weight.shape(), &[c_out, c_in, 3, 3], "conv3x3 weight for {c_in}->{c_out}");
        let (hw, kk) = (h * w, c_in * 9);
        let (x, wt) = (self.data_arc(), weight.data_arc());
        let mut out = vec![T::zero(); b * c_out * hw];
        let mut col = vec![T::zero(); kk * hw];
        for n in 0..b {
            im2col(&x[n * c_in * hw..][..c_in * hw], c_in, h, w, &mut col);
            gemm(c_out, kk, hw, &wt, false, &col, false, &mut out[n * c_out * hw..], false);
        }
        add_row_bias(&mut out, bias.data(), hw);
        let parents = vec![self.clone(), weight.clone(), bias.clone()];
        Tensor::from_op(out, vec![b, c_out, h, w], parents, move |g, need| {
            let mut dx = need[0].then(|| vec![T::zero(); b * c_in * hw]);
            let mut dw = need[1].then(|| vec![T::zero(); c_out * kk]);
            let mut col = vec![T::zero(); kk * hw];
            for n in 0..b {
                let gn = &g[n * c_out * hw..][..c_out * hw];
                if let Some(dw) = dw.as_mut() {
                    im2col(&x[n * c_in * hw..][..c_in * hw], c_in, h, w, &mut col);
                    gemm(c_out, hw, kk, gn, false, &col, true, dw, true);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(kk, c_out, hw, &wt, true, gn, false, &mut col, false);
                    col2im(&col, c_in, h, w, &mut dx[n * c_in * hw..][..c_in * hw]);
                }
            }
            let db = need[2].then(|| {
                let mut db = vec![T::zero(); c_out];
                row_sums_into(g, &mut db, hw);
                db
            });
            vec![dx, dw, db]
        })
    }

    /// Per-channel 3×3 convolution with zero padding 1. `weight` holds nine
    /// taps per channel.
    pub fn depthwise3x3(&self, weight: &Self, bias: &Self) -> Self {
        let (b, c, h, w) = self.dims4();
        assert_eq!(weight.numel(), c * 9, "depthwise weight {:?} for {c} channels", weight.shape());
        assert_eq!(bias.numel(), c);
        let hw = h * w;
        let (x, wt) = (self.data_arc(), weight.data_arc());
        let mut out = vec![T::zero(); b * c * hw];
        add_row_bias(&mut out, bias.data(), hw);
        for plane in 0..b * c {
            let ch = plane % c;
            let src = &x[plane * hw..][..hw];
            let dst = &mut out[plane * hw..][..hw];
            for_each_tap(h, w, |ky, kx, i, iy, lo, hi| {
                let tap = wt[ch * 9 + ky * 3 + kx];
                let s = &src[iy * w..][..w];
                let d = &mut dst[i * w..][..w];
                for j in lo..hi {
                    d[j] += tap * s[j + kx - 1];
                }
            });
        }
        let parents = vec![self.clone(), weight.clone(), bias.clone()];
        Tensor::from_op(out, vec![b, c, h, w], parents, move |g, need| {
            let mut dx = need[0].then(|| vec![T::zero(); b * c * hw]);
            let mut dw = need[1].then(|| vec![T::zero(); c * 9]);
            for plane in 0..b * c {
                let ch = plane % c;
                let gp = &g[plane * hw..][..hw];
                let src = &x[plane * hw..][..hw];
                for_each_tap(h, w, |ky, kx, i, iy, lo, hi| {
                    let gr = &gp[i * w..][..w];
                    if let Some(dx) = dx.as_mut() {
                        let tap = wt[ch * 9 + ky * 3 + kx];
                        let d = &mut dx[plane * hw + iy * w..][..w];
                        for j in lo..hi {
                            d[j + kx - 1] += tap * gr[j];
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        let s = &src[iy * w..][..w];
                        let mut acc = T::zero();
                        for j in lo..hi {
                            acc += gr[j] * s[j + kx - 1];
                        }
                        dw[ch * 9 + ky * 3 + kx] += acc;
                    }
                });
            }
            let db = need[2].then(|| {
                let mut db = vec![T::zero(); c];
                row_sums_into(g, &mut db, hw);
                db
            });
            vec![dx, dw, db]
        })
    }

    /// Layer normalization across channels at every spatial site, with a
    /// per-channel affine map. Input is `(B, C, ...)`.
    pub fn channel_layer_norm(&self, weight: &Self, bias: &Self, eps: f64) -> Self {
        assert!(self.rank() >= 2, "channel_layer_norm on {:?}", self.shape());
        let (b, c) = (self.dim(0), self.dim(1));
        let p = self.numel() / (b * c).max(1);
        assert_eq!(weight.numel(), c);
        assert_eq!(bias.numel(), c);
        let eps = T::from_f64(eps);
        let inv_c = T::from_f64(1.0 / c as f64);
        let x = self.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); b * p];
        for n in 0..b {
            let xs = &x[n * c * p..][..c * p];
            let mut mean = vec![T::zero(); p];
            for row in xs.chunks_exact(p) {
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m *= inv_c);
            let mut var = vec![T::zero(); p];
            for row in xs.chunks_exact(p) {
                for ((v, &xv), &m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = xv - m;
                    *v += d * d;
                }
            }
            let rs = &mut rstd[n * p..][..p];
            for (r, &v) in rs.iter_mut().zip(&var) {
                *r = T::one() / (v * inv_c + eps).sqrt();
            }
            let xh = &mut xhat[n * c * p..][..c * p];
            for (row_out, row) in xh.chunks_exact_mut(p).zip(xs.chunks_exact(p)) {
                for (((o, &xv), &m), &r) in row_out.iter_mut().zip(row).zip(&mean).zip(rs.iter()) {
                    *o = (xv - m) * r;
                }
            }
        }
        let (wv, bv) = (weight.data(), bias.data());
        let mut out = xhat.clone();
        for (r, row) in out.chunks_exact_mut(p).enumerate() {
            let (s, o) = (wv[r % c], bv[r % c]);
            row.iter_mut().for_each(|v| *v = *v * s + o);
        }
        let xhat = Arc::new(xhat);
        let wt = weight.data_arc();
        let parents = vec![self.clone(), weight.clone(), bias.clone()];
        Tensor::from_op(out, self.shape().to_vec(), parents, move |g, need| {
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); g.len()];
                for n in 0..b {
                    let (gs, xh) = (&g[n * c * p..][..c * p], &xhat[n * c * p..][..c * p]);
                    let mut m1 = vec![T::zero(); p];
                    let mut m2 = vec![T::zero(); p];
                    for ch in 0..c {
                        let s = wt[ch];
                        for j in 0..p {
                            let d = gs[ch * p + j] * s;
                            m1[j] += d;
                            m2[j] += d * xh[ch * p + j];
                        }
                    }
                    let rs = &rstd[n * p..][..p];
                    let out = &mut dx[n * c * p..][..c * p];
                    for ch in 0..c {
                        let s = wt[ch];
                        for j in 0..p {
                            let d = gs[ch * p + j] * s;
                            out[ch * p + j] = rs[j] * (d - inv_c * m1[j] - xh[ch * p + j] * inv_c * m2[j]);
                        }
                    }
                }
                dx
            });
            let dw = need[1].then(|| {
                let mut dw = vec![T::zero(); c];
                for (r, (gr, xr)) in g.chunks_exact(p).zip(xhat.chunks_exact(p)).enumerate() {
                    dw[r % c] += gr.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>();
                }
                dw
            });
            let db = need[2].then(|| {
                let mut db = vec![T::zero(); c];
                row_sums_into(g, &mut db, p);
                db
            });
            vec![dx, dw, db]
        })
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&self) -> Self {
        let l = *self.shape().last().expect("softmax of a scalar");
        let mut y = self.to_vec();
        for row in y.chunks_exact_mut(l) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v = *v / sum);
        }
        let y = Arc::new(y);
        let saved = Arc::clone(&y);
        Tensor::from_op_shared(y, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            let mut dx = vec![T::zero(); g.len()];
            for ((d, gr), yr) in dx.chunks_exact_mut(l).zip(g.chunks_exact(l)).zip(saved.chunks_exact(l)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((d, &gv), &yv) in d.iter_mut().zip(gr).zip(yr) {
                    *d = yv * (gv - dot);
                }
            }
            vec![Some(dx)]
        })
    }

    /// `x / sqrt(sum(x^2) + eps)` along the last axis.
    pub fn l2_normalize_last(&self, eps: f64) -> Self {
        let l = *self.shape().last().expect("normalize of a scalar");
        let eps = T::from_f64(eps);
        let mut y = self.to_vec();
        let mut norms = Vec::with_capacity(y.len() / l.max(1));
        for row in y.chunks_exact_mut(l) {
            let n = (row.iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
            row.iter_mut().for_each(|v| *v = *v / n);
            norms.push(n);
        }
        let y = Arc::new(y);
        let saved = Arc::clone(&y);
        Tensor::from_op_shared(y, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            let mut dx = vec![T::zero(); g.len()];
            let rows = dx.chunks_exact_mut(l).zip(g.chunks_exact(l)).zip(saved.chunks_exact(l));
            for (((d, gr), yr), &n) in rows.zip(&norms) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((d, &gv), &yv) in d.iter_mut().zip(gr).zip(yr) {
                    *d = (gv - yv * dot) / n;
                }
            }
            vec![Some(dx)]
        })
    }

    /// Correlation with a fixed 1-D `kernel` along `axis`, keeping only
    /// positions where the kernel fits entirely.
    pub fn filter_valid(&self, axis: usize, kernel: &[f64]) -> Self {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
        let (len, taps) = (shape[axis], kernel.len());
        assert!(taps >= 1 && taps <= len, "kernel of {taps} taps does not fit length {len}");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let out_len = len - taps + 1;
        let ker: Vec<T> = kernel.iter().map(|&v| T::from_f64(v)).collect();
        let x = self.data();
        let mut out = vec![T::zero(); outer * out_len * inner];
        for o in 0..outer {
            for i in 0..out_len {
                let dst = &mut out[(o * out_len + i) * inner..][..inner];
                for (k, &kv) in ker.iter().enumerate() {
                    let src = &x[(o * len + i + k) * inner..][..inner];
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += kv * s);
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = out_len;
        let total = self.numel();
        Tensor::from_op(out, out_shape, vec![self.clone()], move |g, _| {
            let mut dx = vec![T::zero(); total];
            for o in 0..outer {
                for i in 0..out_len {
                    let gr = &g[(o * out_len + i) * inner..][..inner];
                    for (k, &kv) in ker.iter().enumerate() {
                        let d = &mut dx[(o * len + i + k) * inner..][..inner];
                        d.iter_mut().zip(gr).for_each(|(d, &s)| *d += kv * s);
                    }
                }
            }
            vec![Some(dx)]
        })
    }
}

/// Visits every in-bounds (tap, output row) pair of a zero-padded 3×3
/// stencil: `f(ky, kx, out_row, src_row, col_lo, col_hi)` where output
/// columns `col_lo..col_hi` read source column `j + kx - 1`.
fn for_each_tap(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    for ky in 0..3 {
        for kx in 0..3 {
            let lo = usize::from(kx == 0);
            let hi = if kx == 2 { w - 1 } else { w };
            for i in 0..h {
                let iy = i as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                f(ky, kx, i, iy as usize, lo, hi);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::gradcheck::{assert_gradients, values};
    use crate::Tensor;

    fn t(seed: u64, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(values(seed, shape.iter().product()), shape)
    }

    fn p(seed: u64, shape: &[usize]) -> Tensor<f64> {
        Tensor::param(values(seed, shape.iter().product()), shape)
    }

    /// Direct definition of a zero-padded 3×3 grouped convolution.
    fn conv_oracle(x: &[f64], w: &[f64], bias: &[f64], dims: [usize; 4], c_out: usize, depthwise: bool) -> Vec<f64> {
        let [b, c_in, h, wd] = dims;
        let mut out = vec![0.0; b * c_out * h * wd];
        for n in 0..b {
            for o in 0..c_out {
                for i in 0..h {
                    for j in 0..wd {
                        let mut acc = bias[o];
                        let inputs: Vec<usize> = if depthwise { vec![o] } else { (0..c_in).collect() };
                        for (ci_idx, &ci) in inputs.iter().enumerate() {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (iy, jx) = (i as isize + ky - 1, j as isize + kx - 1);
                                    if iy < 0 || jx < 0 || iy >= h as isize || jx >= wd as isize {
                                        continue;
                                    }
                                    let wi = if depthwise {
                                        o * 9
                                    } else {
                                        (o * c_in + ci_idx) * 9
                                    } + (ky * 3 + kx) as usize;
                                    acc += w[wi] * x[((n * c_in + ci) * h + iy as usize) * wd + jx as usize];
                                }
                            }
                        }
                        out[((n * c_out + o) * h + i) * wd + j] = acc;
                    }
                }
            }
        }
        out
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn convolutions_match_direct_sums() {
        let x = t(1, &[2, 3, 5, 4]);
        let w = t(2, &[4, 3, 3, 3]);
        let b = t(3, &[4]);
        let want = conv_oracle(x.data(), w.data(), b.data(), [2, 3, 5, 4], 4, false);
        close(x.conv3x3(&w, &b).data(), &want, 1e-12);

        let wd = t(4, &[3, 1, 3, 3]);
        let bd = t(5, &[3]);
        let want = conv_oracle(x.data(), wd.data(), bd.data(), [2, 3, 5, 4], 3, true);
        close(x.depthwise3x3(&wd, &bd).data(), &want, 1e-12);

        let w1 = t(6, &[2, 3]);
        let b1 = t(7, &[2]);
        let y = x.conv1x1(&w1, &b1);
        for n in 0..2 {
            for o in 0..2 {
                for s in 0..20 {
                    let want: f64 = b1.data()[o] + (0..3).map(|c| w1.data()[o * 3 + c] * x.data()[(n * 3 + c) * 20 + s]).sum::<f64>();
                    assert!((y.data()[(n * 2 + o) * 20 + s] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn convolution_gradients() {
        let x = p(10, &[2, 3, 4, 5]);
        let mask = t(11, &[2, 2, 4, 5]);
        let (w, b) = (p(12, &[2, 3, 3, 3]), p(13, &[2]));
        assert_gradients(&[x.clone(), w, b], |v| (v[0].conv3x3(&v[1], &v[2]) * &mask).sum_all());
        let (w, b) = (p(14, &[2, 3]), p(15, &[2]));
        assert_gradients(&[x.clone(), w, b], |v| (v[0].conv1x1(&v[1], &v[2]) * &mask).sum_all());
        let mask3 = t(16, &[2, 3, 4, 5]);
        let (w, b) = (p(17, &[3, 1, 3, 3]), p(18, &[3]));
        assert_gradients(&[x.clone(), w, b], |v| (v[0].depthwise3x3(&v[1], &v[2]) * &mask3).sum_all());
        // single-column and single-row images hit every boundary branch
        let thin = p(19, &[1, 2, 3, 1]);
        let (w, b) = (p(20, &[1, 2, 3, 3]), p(21, &[1]));
        assert_gradients(&[thin, w, b], |v| v[0].conv3x3(&v[1], &v[2]).sqr().sum_all());
    }

    #[test]
    fn layer_norm_statistics_and_gradients() {
        let x = t(30, &[2, 6, 3, 3]).affine(4.0, 2.0);
        let ones = Tensor::<f64>::ones(&[6]);
        let zeros = Tensor::<f64>::zeros(&[6]);
        let y = x.channel_layer_norm(&ones, &zeros, 1e-5);
        let mean = y.mean_keepdim(1);
        let var = y.sqr().mean_keepdim(1);
        assert!(mean.data().iter().all(|m| m.abs() < 1e-12));
        assert!(var.data().iter().all(|v| (v - 1.0).abs() < 1e-4));

        let x = p(31, &[2, 4, 3, 2]);
        let mask = t(32, &[2, 4, 3, 2]);
        let (w, b) = (p(33, &[4]), p(34, &[4]));
        assert_gradients(&[x, w, b], |v| (v[0].channel_layer_norm(&v[1], &v[2], 1e-5) * &mask).sum_all());
    }

    #[test]
    fn softmax_and_normalize() {
        let x = t(40, &[3, 4, 5]).scale(30.0);
        let s = x.softmax_last().sum_keepdim(2);
        assert!(s.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let n = x.l2_normalize_last(1e-12).sqr().sum_keepdim(2);
        assert!(n.data().iter().all(|v| (v - 1.0).abs() < 1e-12));

        let x = p(41, &[2, 3, 4]);
        let mask = t(42, &[2, 3, 4]);
        assert_gradients(&[x.clone()], |v| (v[0].softmax_last() * &mask).sum_all());
        assert_gradients(&[x], |v| (v[0].l2_normalize_last(1e-12) * &mask).sum_all());
    }

    #[test]
    fn valid_filter() {
        let x = Tensor::<f64>::from_vec((0..12).map(|v| v as f64).collect(), &[1, 1, 3, 4]);
        let y = x.filter_valid(3, &[1.0, 0.0, -1.0]);
        assert_eq!(y.shape(), &[1, 1, 3, 2]);
        assert_eq!(y.to_vec(), vec![-2.0; 6]);
        let z = x.filter_valid(2, &[0.5, 0.5]);
        assert_eq!(z.to_vec(), vec![2., 3., 4., 5., 6., 7., 8., 9.]);

        let x = p(50, &[2, 1, 6, 5]);
        assert_gradients(&[x], |v| {
            v[0].filter_valid(2, &[0.2, 0.5, 0.3]).filter_valid(3, &[0.6, 0.4]).sqr().sum_all()
        });
    }
}
