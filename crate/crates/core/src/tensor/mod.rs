//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable row-major array of `f64` values. Every
//! operation on tensors that require gradients records its inputs and a
//! backward closure, so the graph is rebuilt on each forward pass
//! (define-by-run). [`Tensor::backward`] walks the graph in reverse
//! topological order from a scalar loss and accumulates gradients into
//! every reachable node that requires them.
//!
//! Any node can carry a gradient hook. During a backward pass the hook
//! sees the node's fully accumulated incoming gradient exactly once and may
//! rewrite it in place before it propagates further upstream. The L1
//! gradient clipping used for adversarial training is installed this way.

mod linalg;
mod ops;

pub use linalg::gemm;

use std::cell::RefCell;
use std::collections::HashMap;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// In-place transform applied to a node's incoming gradient during backward.
pub type GradHook = Box<dyn Fn(&mut [f64])>;

/// Gradient of the output with respect to each parent; `None` for parents
/// that do not require gradients.
type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct BackwardCtx<'a> {
    pub parents: &'a [Tensor],
    pub out: &'a [f64],
    pub grad: &'a [f64],
}

struct GradFn {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    hook: RefCell<Option<GradHook>>,
    grad_fn: Option<GradFn>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Shared handle to a node of the autodiff graph.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.op))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            hook: RefCell::new(None),
            grad_fn,
        }))
    }

    /// Constant leaf tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero-sized dimension in shape {shape:?}")));
        }
        if data.len() != numel(shape) {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self::make(data, shape.to_vec(), false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.with_requires_grad(true))
    }

    pub fn scalar(value: f64) -> Self {
        Self::make(vec![value], Vec::new(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::make(vec![0.0; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::make(vec![1.0; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::make(vec![value; numel(shape)], shape.to_vec(), false, None)
    }

    /// Returns a leaf copy with the given `requires_grad` flag.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self::make(self.0.data.clone(), self.0.shape.clone(), requires_grad, None)
    }

    /// Constant leaf sharing this tensor's values; gradients stop here.
    pub fn detach(&self) -> Self {
        self.with_requires_grad(false)
    }

    /// Records a new graph node. Gradients are tracked when any parent needs them.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: impl Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            parents,
            backward: Box::new(backward),
        });
        Self::make(data, shape, requires_grad, grad_fn)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Accumulated gradient, if any backward pass has reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Installs `hook`, replacing any existing one.
    pub fn set_gradient_hook(&self, hook: impl Fn(&mut [f64]) + 'static) {
        *self.0.hook.borrow_mut() = Some(Box::new(hook));
    }

    pub fn clear_gradient_hook(&self) {
        *self.0.hook.borrow_mut() = None;
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Reverse-mode sweep from this scalar.
    ///
    /// Gradients accumulate (`+=`) into every reachable node that requires
    /// them, so several passes over a shared graph add up. Within a single
    /// pass a node's hook runs once on the gradient summed over all of its
    /// consumers, before that gradient is stored or propagated.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);

        for node in order.iter().rev() {
            let Some(mut g) = pending.remove(&node.0.id) else {
                continue;
            };
            if let Some(hook) = node.0.hook.borrow().as_ref() {
                hook(&mut g);
            }
            {
                let mut slot = node.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g.clone()),
                }
            }
            let Some(grad_fn) = &node.0.grad_fn else {
                continue;
            };
            let ctx = BackwardCtx {
                parents: &grad_fn.parents,
                out: &node.0.data,
                grad: &g,
            };
            let parent_grads = (grad_fn.backward)(&ctx);
            debug_assert_eq!(parent_grads.len(), grad_fn.parents.len(), "{}", grad_fn.op);
            for (parent, pg) in grad_fn.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), parent.numel(), "{}", grad_fn.op);
                match pending.get_mut(&parent.0.id) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(parent.0.id, pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes requiring gradients, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // (node, children expanded?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.0.id) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(grad_fn) = &node.0.grad_fn {
                for p in grad_fn.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl Drop for Node {
    // Long chains would otherwise recurse once per node while dropping.
    fn drop(&mut self) {
        let mut stack: Vec<Tensor> = self
            .grad_fn
            .take()
            .map(|g| g.parents)
            .unwrap_or_default();
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(t.0) {
                if let Some(g) = node.grad_fn.take() {
                    stack.extend(g.parents);
                }
            }
        }
    }
}
