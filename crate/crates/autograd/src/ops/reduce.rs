use crate::kernels::{expand, reduce_to};
use crate::{Float, Tensor};

impl<T: Float> Tensor<T> {
    pub fn sum_all(&self) -> Self {
        let s: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], vec![], vec![self.clone()], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean_all(&self) -> Self {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Sum over `axis`, keeping it with size one.
    pub fn sum_keepdim(&self, axis: usize) -> Self {
        assert!(axis < self.rank(), "axis {axis} out of range for {:?}", self.shape());
        let full = self.shape().to_vec();
        let mut out = full.clone();
        out[axis] = 1;
        let data = reduce_to(self.data(), &full, &out);
        let target = out.clone();
        Tensor::from_op(data, out, vec![self.clone()], move |g, _| {
            vec![Some(expand(g, &target, &full))]
        })
    }

    pub fn mean_keepdim(&self, axis: usize) -> Self {
        let n = self.dim(axis);
        self.sum_keepdim(axis).scale(1.0 / n as f64)
    }
}
