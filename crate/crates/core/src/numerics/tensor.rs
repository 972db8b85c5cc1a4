//! Dense `f32` tensors with a reverse-mode autodiff graph.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) to an immutable shape, a data buffer,
//! an optional gradient buffer and, for values produced by a differentiable
//! operation, a backlink to the producing node. Calling [`Tensor::backward`] on
//! a scalar walks the graph in reverse topological order and accumulates
//! gradients into every reachable leaf that has `requires_grad` set.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::{Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph construction on the current thread while alive.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        Self { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` without recording an autodiff graph.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let _guard = NoGradGuard::new();
    f()
}

/// Maps the upstream gradient of a node to one optional gradient per parent.
pub(crate) type BackwardFn =
    Box<dyn Fn(&[f32], &[Tensor]) -> Vec<Option<Vec<f32>>> + Send + Sync>;

struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: usize,
    shape: Vec<usize>,
    data: RwLock<Vec<f32>>,
    grad: Mutex<Option<Vec<f32>>>,
    requires_grad: bool,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            node,
        }))
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("tensor shape {shape:?} has a zero extent")));
        }
        if numel(shape) != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} needs {} elements, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f32) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// A trainable leaf.
    pub fn parameter(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(t.into_parameter())
    }

    /// Returns a leaf copy of this tensor's values with `requires_grad` set.
    pub fn into_parameter(self) -> Self {
        let data = self.to_vec();
        Self::build(self.0.shape.clone(), data, true, None)
    }

    /// Output of a differentiable op. The graph link is only kept when
    /// recording is enabled and at least one parent carries gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f32>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::build(shape, data, true, Some(Node { parents, backward }))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f32>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    /// Mutable access for in-place parameter updates. Only meaningful on leaves.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f32>> {
        self.0.data.write().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.grad_lock().clone()
    }

    pub(crate) fn grad_lock(&self) -> MutexGuard<'_, Option<Vec<f32>>> {
        self.0.grad.lock().expect("tensor grad lock poisoned")
    }

    pub fn zero_grad(&self) {
        *self.grad_lock() = None;
    }

    /// A new leaf sharing no graph history with `self`. Gradient never flows
    /// back through the returned value.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(Self::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reverse-mode pass from a scalar. Leaves with `requires_grad` accumulate
    /// into their gradient buffer; intermediate gradients are discarded.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let _guard = NoGradGuard::new();
        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<f32>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.0.node {
                None => {
                    let mut slot = t.grad_lock();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(node) => {
                    let parent_grads = (node.backward)(&g, &node.parents);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the gradient-carrying subgraph (parents before children).
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((t, next)) = stack.pop() {
            let parents = t.0.node.as_ref().map(|n| n.parents.as_slice()).unwrap_or(&[]);
            if next < parents.len() {
                let p = parents[next].clone();
                stack.push((t, next + 1));
                if p.requires_grad() && visited.insert(p.id()) {
                    stack.push((p, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_length_must_agree() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
        let t = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let t = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let err = t.backward().unwrap_err();
        assert!(err.to_string().contains("scalar"));
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let p = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let r = no_grad(|| p.reshape(&[1, 2]).unwrap());
        assert!(!r.requires_grad());
        assert!(r.is_leaf());
        assert!(grad_enabled());
    }

    #[test]
    fn detached_leaf_never_accumulates() {
        let p = Tensor::parameter(&[1], vec![3.0]).unwrap();
        let d = p.detach();
        assert!(!d.requires_grad());
        let out = d.reshape(&[1]).unwrap();
        out.backward().unwrap();
        assert!(d.grad().is_none());
        assert!(p.grad().is_none());
    }
}
