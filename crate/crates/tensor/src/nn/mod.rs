//! Layers, initialization and the parameter-visiting protocol.

mod conv;
pub mod init;
mod layers;
mod norm;
mod pool;
mod upsample;

use std::cell::RefCell;

pub use conv::{conv2d, Conv2dSpec};
pub use layers::{assign_buffer, Conv2d, Linear, Param};
pub use norm::{BatchNorm2d, LayerNorm2d, BN_MOMENTUM, NORM_EPS};
pub use pool::{channel_max, channel_mean, global_avg_pool, global_max_pool, pool, PoolKind, PoolSpec};
pub use upsample::upsample_bilinear;

use crate::element::Element;
use crate::tensor::Tensor;
use crate::var::Var;

/// Receives the learnable tensors, buffers and batchnorm layers of a module
/// tree. Names are local; [`Visitor::enter`]/[`Visitor::leave`] bracket each
/// submodule.
pub trait Visitor<T: Element> {
    fn param(&mut self, name: &str, p: &Var<T>);
    fn buffer(&mut self, _name: &str, _b: &RefCell<Tensor<T>>) {}
    fn batchnorm(&mut self, _bn: &BatchNorm2d<T>) {}
    fn enter(&mut self, _name: &str) {}
    fn leave(&mut self) {}
}

pub trait Module<T: Element> {
    fn visit(&self, v: &mut dyn Visitor<T>);
}

/// Visits `m` as the submodule `name` of the module being visited.
pub fn visit_child<T: Element>(v: &mut dyn Visitor<T>, name: &str, m: &dyn Module<T>) {
    v.enter(name);
    m.visit(v);
    v.leave();
}

impl<T: Element, M: Module<T>> Module<T> for Option<M> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        if let Some(m) = self {
            m.visit(v);
        }
    }
}

impl<T: Element, M: Module<T>> Module<T> for Vec<M> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        for (i, m) in self.iter().enumerate() {
            visit_child(v, &i.to_string(), m);
        }
    }
}

#[derive(Default)]
struct PathStack(Vec<String>);

impl PathStack {
    fn name(&self, leaf: &str) -> String {
        self.0
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(leaf))
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(".")
    }
}

/// A named entry of a module's state.
pub enum Entry<'a, T: Element> {
    Param(&'a Var<T>),
    Buffer(&'a RefCell<Tensor<T>>),
}

struct FnVisitor<F> {
    path: PathStack,
    f: F,
}

impl<T: Element, F: FnMut(&str, Entry<'_, T>)> Visitor<T> for FnVisitor<F> {
    fn param(&mut self, name: &str, p: &Var<T>) {
        let full = self.path.name(name);
        (self.f)(&full, Entry::Param(p));
    }
    fn buffer(&mut self, name: &str, b: &RefCell<Tensor<T>>) {
        let full = self.path.name(name);
        (self.f)(&full, Entry::Buffer(b));
    }
    fn enter(&mut self, name: &str) {
        self.path.0.push(name.to_string());
    }
    fn leave(&mut self) {
        self.path.0.pop();
    }
}

/// Calls `f` with the dotted path of every parameter and buffer, in
/// declaration order.
pub fn for_each_entry<T: Element>(m: &dyn Module<T>, f: impl FnMut(&str, Entry<'_, T>)) {
    let mut v = FnVisitor {
        path: PathStack::default(),
        f,
    };
    m.visit(&mut v);
}

pub fn named_parameters<T: Element>(m: &dyn Module<T>) -> Vec<(String, Var<T>)> {
    let mut out = Vec::new();
    for_each_entry(m, |name, e| {
        if let Entry::Param(p) = e {
            out.push((name.to_string(), p.clone()));
        }
    });
    out
}

pub fn parameters<T: Element>(m: &dyn Module<T>) -> Vec<Var<T>> {
    named_parameters(m).into_iter().map(|(_, p)| p).collect()
}

/// Total number of learnable scalars.
pub fn param_count<T: Element>(m: &dyn Module<T>) -> usize {
    let mut n = 0;
    for_each_entry(m, |_, e| {
        if let Entry::Param(p) = e {
            n += p.numel();
        }
    });
    n
}

struct ModeSetter(bool);

impl<T: Element> Visitor<T> for ModeSetter {
    fn param(&mut self, _name: &str, _p: &Var<T>) {}
    fn batchnorm(&mut self, bn: &BatchNorm2d<T>) {
        bn.set_training(self.0);
    }
}

/// Switches every batchnorm layer between batch and running statistics.
pub fn set_training<T: Element>(m: &dyn Module<T>, on: bool) {
    m.visit(&mut ModeSetter(on));
}

pub fn zero_grads<T: Element>(m: &dyn Module<T>) {
    for p in parameters(m) {
        p.zero_grad();
    }
}
