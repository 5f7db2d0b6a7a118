use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use crate::Float;

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operations for differentiation.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Computes parent gradients from the output gradient. The flag slice tells
/// which parents need one; entries for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct GradFn<T: Float> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Float> {
    id: usize,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

impl<T: Float> Drop for Node<T> {
    // Unwinds long graphs iteratively so dropping a deep chain cannot
    // exhaust the stack.
    fn drop(&mut self) {
        let mut stack: Vec<Tensor<T>> = match self.grad_fn.take() {
            Some(g) => g.parents,
            None => return,
        };
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.0) {
                if let Some(g) = node.grad_fn.take() {
                    stack.extend(g.parents);
                }
            }
        }
    }
}

/// Immutable dense row-major tensor that records the operations producing it.
pub struct Tensor<T: Float>(Arc<Node<T>>);

impl<T: Float> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>{:?}", T::NAME, self.shape())?;
        if self.numel() <= 8 {
            write!(f, " {:?}", self.data())?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Float> Tensor<T> {
    fn leaf(data: Arc<Vec<T>>, shape: Vec<usize>, requires_grad: bool) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "data length {} does not match shape {shape:?}",
            data.len()
        );
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn: None,
        }))
    }

    /// Constant tensor (never receives a gradient).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        Self::leaf(Arc::new(data), shape.to_vec(), false)
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Self {
        Self::from_vec(data.iter().map(|&v| T::from_f64(v)).collect(), shape)
    }

    /// Trainable leaf; gradients are reported for it by [`backward`](Self::backward).
    pub fn param(data: Vec<T>, shape: &[usize]) -> Self {
        Self::leaf(Arc::new(data), shape.to_vec(), true)
    }

    pub(crate) fn param_shared(data: Arc<Vec<T>>, shape: &[usize]) -> Self {
        Self::leaf(data, shape.to_vec(), true)
    }

    pub fn full(value: T, shape: &[usize]) -> Self {
        Self::from_vec(vec![value; numel(shape)], shape)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(T::zero(), shape)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(T::one(), shape)
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(vec![value], &[])
    }

    /// Builds an op output. The closure is kept only if some parent needs a
    /// gradient and recording is enabled.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        Self::from_op_shared(Arc::new(data), shape, parents, backward)
    }

    pub(crate) fn from_op_shared(
        data: Arc<Vec<T>>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Self::leaf(data, shape, false);
        }
        assert_eq!(data.len(), numel(&shape));
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad: true,
            grad_fn: Some(GradFn {
                parents,
                backward: Box::new(backward),
            }),
        }))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.0.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.to_vec()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.data_arc(), self.0.shape.clone(), false)
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match self.shape() {
            &[b, c, h, w] => (b, c, h, w),
            s => panic!("expected a 4-d tensor, got shape {s:?}"),
        }
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor::from_vec(
            self.data().iter().map(|v| U::from_f64(v.as_f64())).collect(),
            self.shape(),
        )
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self) -> Gradients<T> {
        assert_eq!(self.numel(), 1, "backward() needs a scalar, got {:?}", self.shape());
        self.backward_with(vec![T::one()])
    }

    /// Reverse-mode sweep seeded with an explicit output gradient.
    pub fn backward_with(&self, seed: Vec<T>) -> Gradients<T> {
        assert_eq!(seed.len(), self.numel());
        let mut leaves = HashMap::new();
        if !self.requires_grad() {
            return Gradients { map: leaves };
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    leaves.insert(node.id(), grad);
                }
                Some(g) => {
                    let needs: Vec<bool> = g.parents.iter().map(|p| p.requires_grad()).collect();
                    let parent_grads = (g.backward)(&grad, &needs);
                    debug_assert_eq!(parent_grads.len(), g.parents.len());
                    for ((parent, pg), need) in g.parents.iter().zip(parent_grads).zip(&needs) {
                        let (Some(pg), true) = (pg, *need) else {
                            continue;
                        };
                        debug_assert_eq!(pg.len(), parent.numel());
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Gradients { map: leaves }
    }

    /// Nodes that require grad, parents before children.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (node, children expanded?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(g) = &node.0.grad_fn {
                for p in &g.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// Gradients of a backward sweep, keyed by leaf tensor.
#[derive(Debug, Default)]
pub struct Gradients<T: Float> {
    map: HashMap<usize, Vec<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.map.get(&t.id()).map(Vec::as_slice)
    }

    pub fn remove(&mut self, t: &Tensor<T>) -> Option<Vec<T>> {
        self.map.remove(&t.id())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// A trainable array whose value can be replaced between steps. Clones share
/// the value, so layers holding a parameter see every update.
#[derive(Clone)]
pub struct Parameter<T: Float> {
    leaf: Arc<RwLock<Tensor<T>>>,
}

impl<T: Float> fmt::Debug for Parameter<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Parameter{:?}", self.shape())
    }
}

impl<T: Float> Parameter<T> {
    pub fn new(data: Vec<T>, shape: &[usize]) -> Self {
        Self {
            leaf: Arc::new(RwLock::new(Tensor::param(data, shape))),
        }
    }

    /// The current value as a graph leaf. Gradients of a sweep are keyed by
    /// this leaf until the next [`set`](Self::set).
    pub fn tensor(&self) -> Tensor<T> {
        self.leaf.read().expect("parameter lock poisoned").clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tensor().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tensor().numel()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.tensor().to_vec()
    }

    /// Replaces the value. Graphs built before the call keep the old value.
    pub fn set(&self, data: Vec<T>) {
        let mut leaf = self.leaf.write().expect("parameter lock poisoned");
        assert_eq!(data.len(), leaf.numel(), "parameter size changed");
        *leaf = Tensor::param_shared(Arc::new(data), leaf.shape());
    }
}
