//! Tape-based reverse-mode differentiation.
//!
//! Every operation pushes a node holding its output value and a closure that
//! maps the output gradient onto its inputs. Nodes are appended in evaluation
//! order, so walking the tape from the loss towards index 0 is a reverse
//! topological traversal and visits every node exactly once.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

struct Node {
    value: Arc<Tensor>,
    requires_grad: bool,
    param: Option<ParamId>,
    backward: Option<BackwardFn>,
}

pub struct Tape {
    id: u64,
    grad_enabled: bool,
    nodes: RefCell<Vec<Node>>,
    fault_scale: Cell<Option<f64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            grad_enabled: true,
            nodes: RefCell::new(Vec::new()),
            fault_scale: Cell::new(None),
        }
    }

    /// A tape that records values only; `backward` on it always fails.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Tape::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Negative-control hook: scales the SiLU input gradient recorded after
    /// this call, so gradient checks must fail.
    #[doc(hidden)]
    pub fn inject_gradient_fault(&self, scale: f64) {
        self.fault_scale.set(Some(scale));
    }

    pub(crate) fn fault_scale(&self) -> Option<f64> {
        self.fault_scale.get()
    }

    /// Value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_node(Arc::new(value), false, None, None)
    }

    /// Differentiable input; its gradient is available from [`Gradients::get`].
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push_node(Arc::new(value), self.grad_enabled, None, None)
    }

    /// Leaf bound to a stored parameter. Gradients flow back into the store
    /// through [`Gradients::accumulate_into`].
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        self.push_node(store.shared_value(id), self.grad_enabled, Some(id), None)
    }

    pub fn value(&self, v: Var) -> Arc<Tensor> {
        assert_eq!(v.tape, self.id, "variable recorded on a different tape");
        Arc::clone(&self.nodes.borrow()[v.index].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.index].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.len() {
            return Err(Error::Usage("variable does not belong to this tape".into()));
        }
        Ok(())
    }

    /// Records an operation result. `backward` is dropped when no input needs a gradient.
    pub(crate) fn push(&self, value: Tensor, inputs: &[Var], backward: BackwardFn) -> Var {
        let requires = self.grad_enabled && inputs.iter().any(|&v| self.requires_grad(v));
        let backward = if requires { Some(backward) } else { None };
        self.push_node(Arc::new(value), requires, None, backward)
    }

    fn push_node(&self, value: Arc<Tensor>, requires_grad: bool, param: Option<ParamId>, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            param,
            backward,
        });
        Var {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    /// Propagates d(loss)/d(node) from a scalar `loss` back to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.grad_enabled {
            return Err(Error::Usage("backward on an inference tape".into()));
        }
        self.check(loss)?;
        let nodes = self.nodes.borrow();
        if nodes[loss.index].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.index].value.shape()
            )));
        }
        if !nodes[loss.index].requires_grad {
            return Err(Error::Usage("loss does not depend on any differentiable value".into()));
        }

        let requires: Vec<bool> = nodes.iter().map(|n| n.requires_grad).collect();
        let sizes: Vec<usize> = nodes.iter().map(|n| n.value.numel()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.index] = Some(vec![1.0]);

        for index in (0..=loss.index).rev() {
            let Some(backward) = nodes[index].backward.as_ref() else {
                continue;
            };
            let Some(grad_out) = grads[index].take() else {
                continue;
            };
            let mut sink = GradSink {
                tape: self.id,
                grads: &mut grads,
                requires: &requires,
                sizes: &sizes,
            };
            backward(&grad_out, &mut sink);
        }

        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i)))
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            params,
        })
    }
}

/// Write access to input gradient buffers during a backward step.
pub struct GradSink<'a> {
    tape: u64,
    grads: &'a mut [Option<Vec<f64>>],
    requires: &'a [bool],
    sizes: &'a [usize],
}

impl GradSink<'_> {
    pub fn wants(&self, v: Var) -> bool {
        v.tape == self.tape && self.requires[v.index]
    }

    /// Runs `f` on the (zero-initialised on first use) gradient buffer of `v`.
    pub fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants(v) {
            return;
        }
        let size = self.sizes[v.index];
        let buf = self.grads[v.index].get_or_insert_with(|| vec![0.0; size]);
        f(buf);
    }

    pub fn add(&mut self, v: Var, grad: &[f64]) {
        self.accumulate(v, |buf| {
            for (b, g) in buf.iter_mut().zip(grad) {
                *b += g;
            }
        });
    }
}

/// Result of a backward pass.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when the loss does not reach it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index)?.as_deref()
    }

    /// Adds parameter gradients into the store's buffers (does not zero them first).
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, index) in &self.params {
            if let Some(g) = &self.grads[index] {
                for (b, v) in store.grad_mut(id).iter_mut().zip(g) {
                    *b += v;
                }
            }
        }
    }
}
