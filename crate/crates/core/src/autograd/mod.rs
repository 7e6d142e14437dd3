//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Computations are recorded on a [`Tape`]. Each recorded node keeps its
//! value, the ids of its parents and a closure mapping the gradient of the
//! node's output to one gradient per parent. Nodes are appended in creation
//! order, which is already a topological order, so [`Tape::backward`] simply
//! walks the tape from the loss back to the first node, visiting every node
//! at most once and accumulating gradients additively across fan-out.

mod gradcheck;
pub mod kernels;
mod ops;

pub use gradcheck::{grad_check, grad_check_sampled, relative_error};
pub use ops::{ActivationKind, BatchNormOutput, ConvSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps the gradient of a node's output to one gradient per parent, in
/// parent order.
pub type BackwardFn = Box<dyn Fn(&Tensor) -> Result<Vec<Tensor>>>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct GradNode {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

impl GradNode {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn parents(&self) -> &[Var] {
        &self.parents
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<GradNode>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(GradNode {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        })
    }

    /// Records a node computed outside the tape. `backward` must return
    /// exactly one gradient per parent, each shaped like that parent.
    pub fn custom(&mut self, parents: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(GradNode {
            value,
            parents: parents.to_vec(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn node(&self, var: Var) -> &GradNode {
        &self.nodes[var.0]
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, node: GradNode) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Every requires-grad node ends up with a gradient shaped like its
    /// value; nodes the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(loss_value.map(|_| 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let parent_grads = backward(&upstream)?;
            if parent_grads.len() != node.parents.len() {
                return Err(Error::invalid(format!(
                    "backward rule of node {id} returned {} gradients for {} parents",
                    parent_grads.len(),
                    node.parents.len()
                )));
            }
            for (parent, g) in node.parents.iter().zip(parent_grads) {
                let pnode = &self.nodes[parent.0];
                if !pnode.requires_grad {
                    continue;
                }
                pnode.value.expect_same_shape(&g, "backward")?;
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
            // Keep the upstream gradient for intermediate nodes so callers
            // can inspect it.
            grads[id] = Some(upstream);
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| match grads.get_mut(id).and_then(Option::take) {
                Some(g) if node.requires_grad => Some(g),
                _ if node.requires_grad => Some(node.value.zeros_like()),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}
