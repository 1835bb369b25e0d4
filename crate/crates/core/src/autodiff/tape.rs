//! Reverse-mode tape.
//!
//! Every op appends a node holding its forward value and, when any input
//! needs a gradient, a closure mapping the upstream gradient to one gradient
//! per parent. [`Tape::backward`] walks the nodes in reverse creation order.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps the upstream gradient to per-parent gradients. The `needs` slice
/// says which parents actually require one; entries for the others may be
/// `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Arc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    flops: Cell<u64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Floating-point operations recorded by forward ops so far.
    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    pub(crate) fn add_flops(&self, n: u64) {
        self.flops.set(self.flops.get() + n);
    }

    fn leaf(
        &self,
        op: &'static str,
        value: Arc<Tensor>,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
            param,
        });
        Var(nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        self.leaf("constant", Arc::new(t), false, None)
    }

    /// Input leaf that receives a gradient.
    pub fn variable(&self, t: Tensor) -> Var {
        self.leaf("variable", Arc::new(t), true, None)
    }

    /// Leaf bound to a stored parameter; its gradient flows back to the store
    /// via [`Gradients::accumulate_into`].
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        let frozen = store.is_frozen(id);
        self.leaf("param", store.value_arc(id), !frozen, Some(id))
    }

    pub fn value(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes.borrow()[v.0].op
    }

    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor,
        parents: &[Var],
        backward: BackwardFn,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.0].requires_grad);
        nodes.push(Node {
            op,
            value: Arc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    /// First node (in creation order) whose value holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (i, n.op))
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            None => Ok(()),
            Some((i, op)) => Err(Error::NonFinite {
                op: op.to_string(),
                detail: format!("node {i}"),
            }),
        }
    }

    /// Back-propagates from `out`. With `seed = None` the output must be a
    /// single element and is seeded with 1.
    pub fn backward(&self, out: Var, seed: Option<Tensor>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let seed = match seed {
            Some(s) => {
                if s.shape() != nodes[out.0].value.shape() {
                    return crate::error::shape_err("backward seed shape differs from output");
                }
                s
            }
            None => {
                if nodes[out.0].value.len() != 1 {
                    return crate::error::shape_err(
                        "backward without a seed needs a scalar output",
                    );
                }
                Tensor::full(nodes[out.0].value.shape(), 1.0)
            }
        };
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &nodes[i];
            let Some(f) = node.backward.as_ref() else {
                continue;
            };
            // interior gradients are consumed here; leaves keep theirs
            let Some(g) = grads[i].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = f(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(pg), true) = (pg, *need) else {
                    continue;
                };
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (i, id)))
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient with respect to a leaf; `None` when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds parameter-leaf gradients into the store, in node order.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}
