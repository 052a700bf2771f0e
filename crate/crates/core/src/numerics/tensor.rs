use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use super::ops::Op;
use super::Scalar;
use crate::error::{dim_err, usage_err, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` without recording any operations. Intermediates are released as
/// soon as they go out of scope, which keeps large inference passes bounded.
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

pub(crate) struct Node<F: Scalar> {
    pub id: u64,
    pub shape: Vec<usize>,
    pub data: Rc<Vec<F>>,
    pub requires_grad: bool,
    pub op: Option<Op<F>>,
}

/// Dense row-major tensor that records the operation that produced it.
///
/// Cloning is cheap: clones share the same node. Node ids grow
/// monotonically, so every tensor's id exceeds the ids of its inputs and
/// sorting by id yields a topological order of the graph.
pub struct Tensor<F: Scalar> {
    pub(crate) node: Rc<Node<F>>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor { node: Rc::clone(&self.node) }
    }
}

impl<F: Scalar> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Scalar> Tensor<F> {
    /// Constant tensor (no gradient).
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// Learnable leaf tensor; its gradient appears in [`Gradients`].
    pub fn param(shape: &[usize], data: Vec<F>) -> Result<Self> {
        Self::leaf(shape, data, true)
    }

    fn leaf(shape: &[usize], data: Vec<F>, requires_grad: bool) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return dim_err(format!("zero extent in shape {shape:?}"));
        }
        if numel(shape) != data.len() {
            return dim_err(format!(
                "shape {shape:?} needs {} values, buffer has {}",
                numel(shape),
                data.len()
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), Rc::new(data), requires_grad, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![F::zero(); numel(shape)])
    }

    pub fn full(shape: &[usize], value: F) -> Result<Self> {
        Self::new(shape, vec![value; numel(shape)])
    }

    pub fn scalar(value: F) -> Self {
        Self::from_parts(Vec::new(), Rc::new(vec![value]), false, None)
    }

    pub(crate) fn from_parts(
        shape: Vec<usize>,
        data: Rc<Vec<F>>,
        requires_grad: bool,
        op: Option<Op<F>>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Rc::new(Node { id: next_id(), shape, data, requires_grad, op }),
        }
    }

    /// Result of an op over `parents`: records `op` only when some parent
    /// needs a gradient and recording is enabled.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<F>,
        parents_need_grad: bool,
        op: impl FnOnce() -> Op<F>,
    ) -> Self {
        let record = parents_need_grad && grad_enabled();
        let op = if record { Some(op()) } else { None };
        Self::from_parts(shape, Rc::new(data), record, op)
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.node.data
    }

    pub(crate) fn data_rc(&self) -> &Rc<Vec<F>> {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.node.data.as_ref().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<F> {
        if self.numel() != 1 {
            return usage_err(format!("item() on tensor of shape {:?}", self.shape()));
        }
        Ok(self.node.data[0])
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.node.shape.clone(), Rc::clone(&self.node.data), false, None)
    }

    /// Replace the values of a leaf tensor, keeping its id and grad flag.
    /// Existing graphs that captured the old values are unaffected.
    pub fn set_data(&mut self, data: Vec<F>) -> Result<()> {
        if data.len() != self.numel() {
            return dim_err(format!(
                "set_data: {} values for shape {:?}",
                data.len(),
                self.shape()
            ));
        }
        if self.node.op.is_some() {
            return usage_err("set_data on a non-leaf tensor");
        }
        self.node = Rc::new(Node {
            id: self.node.id,
            shape: self.node.shape.clone(),
            data: Rc::new(data),
            requires_grad: self.node.requires_grad,
            op: None,
        });
        Ok(())
    }

    /// Same tensor as a learnable leaf with a fresh id.
    pub fn as_param(&self) -> Self {
        Self::from_parts(self.node.shape.clone(), Rc::clone(&self.node.data), true, None)
    }

    pub fn all_finite(&self) -> bool {
        self.node.data.iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep from a scalar. Visits every recorded op reachable
    /// from `self` exactly once, in reverse topological order, and returns
    /// the accumulated gradient of each reachable learnable leaf.
    pub fn backward(&self) -> Result<Gradients<F>> {
        if self.numel() != 1 {
            return usage_err(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            ));
        }
        let mut grads = Gradients { map: HashMap::new() };
        if !self.requires_grad() {
            return Ok(grads);
        }

        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(t) = stack.pop() {
            if let Some(op) = &t.node.op {
                for p in op.parents() {
                    if p.requires_grad() && seen.insert(p.id()) {
                        stack.push(p.clone());
                    }
                }
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: HashMap<u64, Vec<F>> = HashMap::new();
        pending.insert(self.id(), vec![F::one()]);
        for t in order {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.node.op {
                None => {
                    grads.map.insert(t.id(), g);
                }
                Some(op) => {
                    for (parent, pg) in op.backward(&t, &g) {
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
        Ok(grads)
    }
}

/// Gradients of learnable leaves, keyed by tensor id.
#[derive(Debug, Default)]
pub struct Gradients<F: Scalar> {
    map: HashMap<u64, Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, t: &Tensor<F>) -> Option<&[F]> {
        self.map.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient of `t`, or zeros when it did not influence the loss.
    pub fn get_or_zeros(&self, t: &Tensor<F>) -> Vec<F> {
        self.get(t).map(<[F]>::to_vec).unwrap_or_else(|| vec![F::zero(); t.numel()])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
