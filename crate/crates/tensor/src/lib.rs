//! Dense row-major tensors with reverse-mode automatic differentiation and
//! the convolutional layers built on top of them.
//!
//! A [`Var`] wraps a [`Tensor`] and, when created from other gradient
//! carrying vars, records how to propagate gradients back to them. Calling
//! [`Var::backward`] on a scalar fills the `grad` of every parameter leaf.

pub mod element;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod parallel;
pub mod shape;
pub mod stats;
mod tensor;
mod var;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use ops::{BinaryKind, ReduceKind, UnaryKind};
pub use tensor::Tensor;
pub use var::{grad_enabled, no_grad, BackwardCtx, Tape, Var};
