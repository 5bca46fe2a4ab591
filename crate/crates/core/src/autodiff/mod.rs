//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every primitive applied to its variables in
//! creation order, which is already a topological order. [`Graph::backward`]
//! walks the record once in reverse and returns the gradients of a scalar
//! with respect to every node that requires one.
//!
//! ```
//! use elision::autodiff::Graph;
//! use elision::tensor::Tensor;
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
//! let y = x.mul(x).unwrap().sum().unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0, -2.0]);
//! ```

mod gradcheck;
mod ops;

use std::cell::RefCell;

pub use gradcheck::{check_gradients, check_gradients_multi, GradCheckReport};
pub use ops::Mode;
#[allow(unused_imports)]
pub(crate) use ops::{broadcast_shape, for_each_broadcast, strides_for};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};
use ops::Op;

struct Node<T: Float> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation record for one forward pass.
pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Float> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!(
                "{} produced a non-finite value (shape {:?})",
                op.name(),
                value.shape()
            )));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self,
            id: nodes.len() - 1,
        })
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gradients of the scalar `loss` with respect to every node on a path
    /// from a [`Graph::param`] leaf.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::dim("backward", root.value.shape(), &[]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node
                .op
                .inputs()
                .iter()
                .map(|&i| &nodes[i].value)
                .collect();
            for (input, grad) in node.op.backward(&inputs, &node.value, &upstream) {
                if !nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(grad.shape(), nodes[input].value.shape());
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Graph::backward`]. Gradients of intermediate nodes are
/// released during the sweep; leaves keep theirs.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<'g, T: Float> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Tensor<T> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }
}
