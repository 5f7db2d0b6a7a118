use crate::{Float, Tensor};

/// Row/column strides of a logical `rows x cols` matrix stored either as is
/// or transposed.
fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    out_shape: Vec<usize>,
}

fn plan(a: &[usize], b: &[usize], ta: bool, tb: bool) -> MatmulPlan {
    assert!(a.len() >= 2 && b.len() >= 2, "matmul needs rank >= 2, got {a:?} and {b:?}");
    let (ra, rb) = (a.len(), b.len());
    let (m, ka) = if ta { (a[ra - 1], a[ra - 2]) } else { (a[ra - 2], a[ra - 1]) };
    let (kb, n) = if tb { (b[rb - 1], b[rb - 2]) } else { (b[rb - 2], b[rb - 1]) };
    assert_eq!(ka, kb, "matmul inner dims differ: {a:?} (t={ta}) x {b:?} (t={tb})");
    let (ba, bb) = (&a[..ra - 2], &b[..rb - 2]);
    let batch_dims = if ba == bb || bb.is_empty() {
        ba
    } else if ba.is_empty() {
        bb
    } else {
        panic!("matmul batch dims {ba:?} and {bb:?} differ");
    };
    let mut out_shape = batch_dims.to_vec();
    out_shape.extend([m, n]);
    MatmulPlan {
        m,
        k: ka,
        n,
        batch: batch_dims.iter().product(),
        a_batched: !ba.is_empty(),
        b_batched: !bb.is_empty(),
        out_shape,
    }
}

impl<T: Float> Tensor<T> {
    pub fn matmul(&self, other: &Self) -> Self {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` over the trailing two dims, where `op`
    /// transposes when the flag is set. Batch dims must match unless one
    /// side is a plain matrix, which is then shared across the batch.
    pub fn matmul_t(&self, other: &Self, ta: bool, tb: bool) -> Self {
        let p = plan(self.shape(), other.shape(), ta, tb);
        let (m, k, n) = (p.m, p.k, p.n);
        let (rsa, csa) = strides(m, k, ta);
        let (rsb, csb) = strides(k, n, tb);
        let (a, b) = (self.data_arc(), other.data_arc());
        let a_step = if p.a_batched { m * k } else { 0 };
        let b_step = if p.b_batched { k * n } else { 0 };
        let mut out = vec![T::zero(); p.batch * m * n];
        for i in 0..p.batch {
            // SAFETY: offsets and strides stay within the buffers sized above.
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    a.as_ptr().add(i * a_step),
                    rsa,
                    csa,
                    b.as_ptr().add(i * b_step),
                    rsb,
                    csb,
                    T::zero(),
                    out.as_mut_ptr().add(i * m * n),
                    n as isize,
                    1,
                );
            }
        }
        let (a_len, b_len, batch) = (a.len(), b.len(), p.batch);
        Tensor::from_op(out, p.out_shape, vec![self.clone(), other.clone()], move |g, need| {
            let mut da = need[0].then(|| vec![T::zero(); a_len]);
            let mut db = need[1].then(|| vec![T::zero(); b_len]);
            for i in 0..batch {
                let gp = g[i * m * n..].as_ptr();
                // SAFETY: as in the forward pass; gradient buffers mirror the inputs.
                unsafe {
                    if let Some(da) = da.as_mut() {
                        // d op(A) = G · op(B)^T, written back in A's layout
                        T::gemm(
                            m,
                            n,
                            k,
                            T::one(),
                            gp,
                            n as isize,
                            1,
                            b.as_ptr().add(i * b_step),
                            csb,
                            rsb,
                            T::one(),
                            da.as_mut_ptr().add(i * a_step),
                            rsa,
                            csa,
                        );
                    }
                    if let Some(db) = db.as_mut() {
                        // d op(B) = op(A)^T · G
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            a.as_ptr().add(i * a_step),
                            csa,
                            rsa,
                            gp,
                            n as isize,
                            1,
                            T::one(),
                            db.as_mut_ptr().add(i * b_step),
                            rsb,
                            csb,
                        );
                    }
                }
            }
            vec![da, db]
        })
    }
}
