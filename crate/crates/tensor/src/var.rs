//! Reverse-mode autodiff.
//!
//! A [`Var`] is a node in a dynamically built graph. Every op applied to a
//! `Var` whose inputs require gradients records its parents and a backward
//! rule; [`Var::backward`] linearises the reachable graph into a [`Tape`]
//! ordered by creation and walks it in reverse.

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

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

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` without recording any graph; intermediates are freed as soon as
/// they go out of scope.
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

/// Inputs handed to a backward rule.
pub struct BackwardCtx<'a, T: Element> {
    grad: &'a Tensor<T>,
    output: &'a Tensor<T>,
    inputs: Vec<Ref<'a, Tensor<T>>>,
    needs: Vec<bool>,
}

impl<'a, T: Element> BackwardCtx<'a, T> {
    /// Gradient of the root with respect to this op's output.
    pub fn grad(&self) -> &Tensor<T> {
        self.grad
    }

    pub fn output(&self) -> &Tensor<T> {
        self.output
    }

    pub fn input(&self, i: usize) -> &Tensor<T> {
        &self.inputs[i]
    }

    pub fn needs_grad(&self, i: usize) -> bool {
        self.needs[i]
    }
}

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct OpRecord<T: Element> {
    name: &'static str,
    parents: Vec<Var<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Element> {
    id: u64,
    value: RefCell<Tensor<T>>,
    grad: RefCell<Option<Tensor<T>>>,
    requires_grad: bool,
    op: Option<OpRecord<T>>,
}

/// A tensor participating (or not) in gradient recording.
pub struct Var<T: Element>(Rc<Node<T>>);

impl<T: Element> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.op.as_ref().map_or("leaf", |o| o.name);
        write!(f, "Var#{}({op}, {:?})", self.0.id, self.0.value.borrow())
    }
}

impl<T: Element> Var<T> {
    fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value: RefCell::new(value),
            grad: RefCell::new(None),
            requires_grad,
            op: None,
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    /// A learnable leaf: gradients accumulate into it on [`Var::backward`].
    pub fn parameter(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    /// Records the result of a custom op. `backward` returns one optional
    /// gradient per parent, shaped like that parent; entries for parents
    /// that do not need gradients may be `None`.
    pub fn from_op<F>(value: Tensor<T>, name: &'static str, parents: &[&Var<T>], backward: F) -> Self
    where
        F: Fn(&BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> + 'static,
    {
        if cfg!(debug_assertions) && !value.all_finite() {
            let inputs_finite = parents.iter().all(|p| p.value().all_finite());
            debug_assert!(!inputs_finite, "{name} produced non-finite values from finite inputs");
        }
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Self::constant(value);
        }
        Var(Rc::new(Node {
            id: next_id(),
            value: RefCell::new(value),
            grad: RefCell::new(None),
            requires_grad: true,
            op: Some(OpRecord {
                name,
                parents: parents.iter().map(|p| (*p).clone()).collect(),
                backward: Box::new(backward),
            }),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn ptr_eq(&self, other: &Var<T>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op.as_ref().map_or("leaf", |o| o.name)
    }

    pub fn value(&self) -> Ref<'_, Tensor<T>> {
        self.0.value.borrow()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.value.borrow().numel()
    }

    /// Copy of the value, detached from the graph.
    pub fn detach(&self) -> Var<T> {
        Var::constant(self.value().clone())
    }

    /// Replaces the value of a leaf (parameter updates, checkpoint loads).
    pub fn set_value(&self, value: Tensor<T>) -> Result<()> {
        if !self.is_leaf() {
            return Err(TensorError::contract("set_value", "only leaves can be assigned"));
        }
        let mut slot = self.0.value.borrow_mut();
        if slot.shape() != value.shape() {
            return Err(TensorError::shape("set_value", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    /// Mutates a leaf's value in place.
    pub fn update_value(&self, f: impl FnOnce(&mut Tensor<T>)) {
        assert!(self.is_leaf(), "update_value on a non-leaf");
        f(&mut self.0.value.borrow_mut());
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn take_grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Back-propagates from a scalar root, accumulating `d root / d leaf`
    /// into every leaf that requires gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::contract(
                "backward",
                format!("root must be a scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            log::warn!("backward called on a root that is not attached to any tape; nothing to do");
            return Ok(());
        }
        let seed = Tensor::full(&self.shape(), T::one());
        Tape::record(self).backward(seed)
    }
}

/// Topologically ordered record of the ops reachable from a root.
pub struct Tape<T: Element> {
    nodes: Vec<Var<T>>,
}

impl<T: Element> Tape<T> {
    /// Collects every gradient-carrying node reachable from `root`, ordered
    /// so that each op appears after all of its inputs.
    pub fn record(root: &Var<T>) -> Self {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            if let Some(op) = &v.0.op {
                stack.extend(op.parents.iter().cloned());
            }
            nodes.push(v);
        }
        // Creation order is a valid topological order: inputs always exist
        // before the op that consumes them.
        nodes.sort_by_key(Var::id);
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of the recorded ops in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(Var::op_name).collect()
    }

    /// Runs the backward pass with `seed` as the gradient of the last node.
    pub fn backward(&self, seed: Tensor<T>) -> Result<()> {
        let Some(root) = self.nodes.last() else {
            return Ok(());
        };
        if seed.shape() != root.value().shape() {
            return Err(TensorError::shape("backward", seed.shape(), root.value().shape()));
        }
        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        pending.insert(root.id(), seed);
        for node in self.nodes.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            let Some(op) = &node.0.op else {
                let mut slot = node.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.add_assign(&grad)?,
                    None => *slot = Some(grad),
                }
                continue;
            };
            let parent_grads = {
                let output = node.0.value.borrow();
                let ctx = BackwardCtx {
                    grad: &grad,
                    output: &output,
                    inputs: op.parents.iter().map(|p| p.0.value.borrow()).collect(),
                    needs: op.parents.iter().map(Var::requires_grad).collect(),
                };
                (op.backward)(&ctx)?
            };
            if parent_grads.len() != op.parents.len() {
                return Err(TensorError::contract(
                    op.name,
                    format!(
                        "backward returned {} gradients for {} inputs",
                        parent_grads.len(),
                        op.parents.len()
                    ),
                ));
            }
            for (parent, g) in op.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                if g.shape() != parent.value().shape() {
                    return Err(TensorError::shape(op.name, g.shape(), parent.value().shape()));
                }
                match pending.get_mut(&parent.id()) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        pending.insert(parent.id(), g);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Var<f64> {
        Var::parameter(Tensor::scalar(v))
    }

    #[test]
    fn square_gradient() {
        let x = scalar(3.0);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn identity_gradient() {
        let x = scalar(-2.5);
        x.backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let x = scalar(1.5);
        let y = x.add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let x = Var::parameter(Tensor::<f64>::zeros(&[2]));
        assert!(matches!(x.backward(), Err(TensorError::Contract { .. })));
    }

    #[test]
    fn detached_root_is_a_no_op() {
        let c = Var::constant(Tensor::<f64>::scalar(1.0));
        c.backward().unwrap();
        assert!(c.grad().is_none());
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = scalar(2.0);
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn tape_is_topologically_ordered_and_deduplicated() {
        let x = scalar(2.0);
        let a = x.mul(&x).unwrap();
        let b = a.add(&x).unwrap();
        let c = b.mul(&a).unwrap();
        let tape = Tape::record(&c);
        assert_eq!(tape.len(), 4);
        assert_eq!(tape.op_names(), vec!["leaf", "mul", "add", "mul"]);
        // d/dx [(x^2 + x) x^2] = 4x^3 + 3x^2 = 44 at x = 2
        c.backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 44.0);
    }
}
