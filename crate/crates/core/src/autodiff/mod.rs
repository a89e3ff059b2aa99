//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Var`] is an immutable node in a dynamically built computation graph.
//! Operations evaluate eagerly and remember how to push gradients back to
//! their inputs; [`Var::backward`] walks the graph in reverse creation order
//! and returns the gradients of every leaf that requires them.
//!
//! Nodes whose inputs are all constants are created as constants themselves,
//! so running a model with frozen parameters builds no graph at all.

mod conv;
mod loss;
pub(crate) mod ops;
mod roi;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use roi::{roi_align_forward, RoiBox};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) trait BackwardOp<T: Scalar>: Send + Sync {
    /// Gradients with respect to each parent, `None` where `needs[i]` is false.
    fn backward(
        &self,
        grad: &Tensor<T>,
        out: &Tensor<T>,
        parents: &[Var<T>],
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Scalar> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    op: Option<Box<dyn BackwardOp<T>>>,
}

/// Shared handle to a graph node.
pub struct Var<T: Scalar>(Arc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    fn make(
        value: Tensor<T>,
        requires_grad: bool,
        parents: Vec<Var<T>>,
        op: Option<Box<dyn BackwardOp<T>>>,
    ) -> Self {
        Var(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            parents,
            op,
        }))
    }

    /// A trainable leaf.
    pub fn param(value: Tensor<T>) -> Self {
        Self::make(value, true, Vec::new(), None)
    }

    /// A leaf that never receives gradients.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, Vec::new(), None)
    }

    pub(crate) fn from_op(
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        op: impl BackwardOp<T> + 'static,
    ) -> Self {
        if parents.iter().any(|p| p.requires_grad()) {
            Self::make(value, true, parents, Some(Box::new(op)))
        } else {
            Self::constant(value)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.0.value.len(), 1, "item() on non-scalar {:?}", self.shape());
        self.0.value.data()[0]
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Backpropagates from this single-element node.
    pub fn backward(&self) -> Gradients<T> {
        assert_eq!(self.0.value.len(), 1, "backward() needs a scalar output");
        let seed = Tensor::full(self.shape(), T::one());
        self.backward_with(seed)
    }

    pub fn backward_with(&self, seed: Tensor<T>) -> Gradients<T> {
        let mut leaves = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads: leaves };
        }

        let mut order: Vec<Var<T>> = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(v);
        }
        // Children are always created after their parents.
        order.sort_unstable_by_key(|v| std::cmp::Reverse(v.id()));

        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for v in order {
            let Some(grad) = pending.remove(&v.id()) else {
                continue;
            };
            let Some(op) = &v.0.op else {
                leaves.insert(v.id(), grad);
                continue;
            };
            let parents = &v.0.parents;
            let needs: Vec<bool> = parents.iter().map(Var::requires_grad).collect();
            let grads = op.backward(&grad, &v.0.value, parents, &needs);
            debug_assert_eq!(grads.len(), parents.len());
            for (p, g) in parents.iter().zip(grads) {
                let Some(g) = g else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.shape(), p.shape(), "gradient shape mismatch");
                match pending.get_mut(&p.id()) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        pending.insert(p.id(), g);
                    }
                }
            }
        }
        Gradients { grads: leaves }
    }
}

/// Leaf gradients produced by [`Var::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    grads: HashMap<u64, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&v.id())
    }

    /// Gradient of `v`, or zeros of its shape when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: &Var<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }
}

#[cfg(test)]
mod tests;
