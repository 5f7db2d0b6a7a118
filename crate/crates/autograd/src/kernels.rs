//! Strided iteration helpers for broadcasting element-wise ops.
//!
//! Shapes are aligned to the right (numpy semantics). Output dims of size one
//! are dropped and adjacent dims that stay contiguous for every operand are
//! merged, so the common bias/row broadcasts reduce to a couple of tight loops.

use crate::Float;

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    (0..rank)
        .map(|i| {
            let da = dim_from_right(a, rank - 1 - i);
            let db = dim_from_right(b, rank - 1 - i);
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
            }
        })
        .collect()
}

fn dim_from_right(shape: &[usize], from_right: usize) -> usize {
    if from_right < shape.len() {
        shape[shape.len() - 1 - from_right]
    } else {
        1
    }
}

/// Coalesced iteration space over an output shape.
pub(crate) struct Plan {
    pub dims: Vec<usize>,
    /// One stride vector per operand, aligned with `dims`.
    pub strides: Vec<Vec<usize>>,
}

impl Plan {
    pub fn new(out: &[usize], operands: &[&[usize]]) -> Self {
        let rank = out.len();
        let mut full: Vec<Vec<usize>> = operands
            .iter()
            .map(|shape| {
                assert!(shape.len() <= rank, "operand {shape:?} outranks output {out:?}");
                let offset = rank - shape.len();
                let mut strides = vec![0usize; rank];
                let mut acc = 1usize;
                for i in (0..shape.len()).rev() {
                    let d = shape[i];
                    let o = out[offset + i];
                    assert!(d == o || d == 1, "operand {shape:?} does not broadcast to {out:?}");
                    strides[offset + i] = if d == 1 { 0 } else { acc };
                    acc *= d;
                }
                strides
            })
            .collect();

        let mut dims: Vec<usize> = Vec::with_capacity(rank);
        let mut kept: Vec<Vec<usize>> = vec![Vec::with_capacity(rank); operands.len()];
        for (i, &d) in out.iter().enumerate() {
            if d == 1 {
                continue;
            }
            let mergeable = !dims.is_empty()
                && full
                    .iter()
                    .zip(&kept)
                    .all(|(s, k)| *k.last().unwrap() == s[i] * d);
            if mergeable {
                *dims.last_mut().unwrap() *= d;
                for (s, k) in full.iter().zip(kept.iter_mut()) {
                    *k.last_mut().unwrap() = s[i];
                }
            } else {
                dims.push(d);
                for (s, k) in full.iter().zip(kept.iter_mut()) {
                    k.push(s[i]);
                }
            }
        }
        if dims.is_empty() {
            dims.push(1);
            for k in kept.iter_mut() {
                k.push(0);
            }
        }
        full.clear();
        Plan { dims, strides: kept }
    }

    pub fn inner(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Calls `f(run_index, offsets)` for each innermost run, in output order.
    pub fn runs(&self, mut f: impl FnMut(usize, &[usize])) {
        let outer_rank = self.dims.len() - 1;
        let n_ops = self.strides.len();
        let mut offsets = vec![0usize; n_ops];
        let mut counter = vec![0usize; outer_rank];
        let runs: usize = self.dims[..outer_rank].iter().product();
        for r in 0..runs {
            f(r, &offsets);
            // odometer increment
            let mut axis = outer_rank;
            while axis > 0 {
                axis -= 1;
                counter[axis] += 1;
                for (o, s) in offsets.iter_mut().zip(&self.strides) {
                    *o += s[axis];
                }
                if counter[axis] < self.dims[axis] {
                    break;
                }
                for (o, s) in offsets.iter_mut().zip(&self.strides) {
                    *o -= s[axis] * self.dims[axis];
                }
                counter[axis] = 0;
            }
        }
    }
}

/// `f(a, b)` over the broadcast of the two shapes.
pub(crate) fn zip<T: Float>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let plan = Plan::new(out_shape, &[a_shape, b_shape]);
    let inner = plan.inner();
    let (sa, sb) = (*plan.strides[0].last().unwrap(), *plan.strides[1].last().unwrap());
    let mut out = vec![T::zero(); crate::tensor::numel(out_shape)];
    plan.runs(|r, offs| {
        let o = &mut out[r * inner..(r + 1) * inner];
        let (oa, ob) = (offs[0], offs[1]);
        match (sa, sb) {
            (1, 1) => {
                for ((o, &x), &y) in o.iter_mut().zip(&a[oa..oa + inner]).zip(&b[ob..ob + inner]) {
                    *o = f(x, y);
                }
            }
            (1, 0) => {
                let y = b[ob];
                for (o, &x) in o.iter_mut().zip(&a[oa..oa + inner]) {
                    *o = f(x, y);
                }
            }
            (0, 1) => {
                let x = a[oa];
                for (o, &y) in o.iter_mut().zip(&b[ob..ob + inner]) {
                    *o = f(x, y);
                }
            }
            _ => {
                for (k, o) in o.iter_mut().enumerate() {
                    *o = f(a[oa + k * sa], b[ob + k * sb]);
                }
            }
        }
    });
    out
}

/// Sums a gradient laid out over `full` down to the broadcast source `target`.
pub(crate) fn reduce_to<T: Float>(grad: &[T], full: &[usize], target: &[usize]) -> Vec<T> {
    if full == target {
        return grad.to_vec();
    }
    let plan = Plan::new(full, &[target]);
    let inner = plan.inner();
    let st = *plan.strides[0].last().unwrap();
    let mut out = vec![T::zero(); crate::tensor::numel(target)];
    plan.runs(|r, offs| {
        let g = &grad[r * inner..(r + 1) * inner];
        let ot = offs[0];
        if st == 0 {
            let s: T = g.iter().copied().sum();
            out[ot] += s;
        } else if st == 1 {
            for (o, &v) in out[ot..ot + inner].iter_mut().zip(g) {
                *o += v;
            }
        } else {
            for (k, &v) in g.iter().enumerate() {
                out[ot + k * st] += v;
            }
        }
    });
    out
}

/// Expands `src` (broadcastable to `full`) into a dense buffer.
pub(crate) fn expand<T: Float>(src: &[T], src_shape: &[usize], full: &[usize]) -> Vec<T> {
    if src_shape == full {
        return src.to_vec();
    }
    let plan = Plan::new(full, &[src_shape]);
    let inner = plan.inner();
    let st = *plan.strides[0].last().unwrap();
    let mut out = vec![T::zero(); crate::tensor::numel(full)];
    plan.runs(|r, offs| {
        let o = &mut out[r * inner..(r + 1) * inner];
        if st == 0 {
            o.fill(src[offs[0]]);
        } else {
            for (k, o) in o.iter_mut().enumerate() {
                *o = src[offs[0] + k * st];
            }
        }
    });
    out
}
