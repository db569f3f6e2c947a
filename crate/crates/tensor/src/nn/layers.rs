use std::cell::RefCell;

use rand::Rng;

use super::conv::{conv2d, Conv2dSpec};
use super::init::{kaiming_uniform, RELU_GAIN};
use super::norm::{BatchNorm2d, LayerNorm2d};
use super::{Module, Visitor};
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;
use crate::var::Var;

pub struct Conv2d<T: Element> {
    pub spec: Conv2dSpec,
    pub weight: Var<T>,
    pub bias: Option<Var<T>>,
}

impl<T: Element> Conv2d<T> {
    /// Kaiming-uniform (fan-in) weights and zero bias.
    pub fn new<R: Rng>(spec: Conv2dSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let ws = spec.weight_shape();
        let fan_in = ws[1] * ws[2] * ws[3];
        Ok(Conv2d {
            spec,
            weight: Var::parameter(kaiming_uniform(&ws, fan_in, RELU_GAIN, rng)),
            bias: spec.bias.then(|| Var::parameter(Tensor::zeros(&[spec.out_ch]))),
        })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        conv2d(x, &self.weight, self.bias.as_ref(), &self.spec)
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        v.param("weight", &self.weight);
        if let Some(b) = &self.bias {
            v.param("bias", b);
        }
    }
}

/// `y = x W + b` on `[batch, in]` rows, weight stored as `[in, out]`.
pub struct Linear<T: Element> {
    pub weight: Var<T>,
    pub bias: Option<Var<T>>,
}

impl<T: Element> Linear<T> {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, bias: bool, rng: &mut R) -> Self {
        Linear {
            weight: Var::parameter(kaiming_uniform(&[inputs, outputs], inputs, 1.0, rng)),
            bias: bias.then(|| Var::parameter(Tensor::zeros(&[outputs]))),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

impl<T: Element> Module<T> for Linear<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        v.param("weight", &self.weight);
        if let Some(b) = &self.bias {
            v.param("bias", b);
        }
    }
}

impl<T: Element> Module<T> for BatchNorm2d<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        v.param("weight", &self.gamma);
        v.param("bias", &self.beta);
        v.buffer("running_mean", &self.running_mean);
        v.buffer("running_var", &self.running_var);
        v.batchnorm(self);
    }
}

impl<T: Element> Module<T> for LayerNorm2d<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        v.param("weight", &self.gamma);
        v.param("bias", &self.beta);
    }
}

/// A learnable tensor that is not part of a layer (e.g. a gating scalar).
pub struct Param<T: Element>(pub Var<T>);

impl<T: Element> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Param(Var::parameter(value))
    }
}

impl<T: Element> Module<T> for Param<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        v.param("", &self.0);
    }
}

/// Checks that a buffer being loaded matches the one in place.
pub fn assign_buffer<T: Element>(name: &str, slot: &RefCell<Tensor<T>>, value: Tensor<T>) -> Result<()> {
    let mut cur = slot.borrow_mut();
    if cur.shape() != value.shape() {
        return Err(TensorError::Contract {
            op: "assign_buffer",
            msg: format!("{name}: shape {:?} does not match {:?}", value.shape(), cur.shape()),
        });
    }
    *cur = value;
    Ok(())
}
