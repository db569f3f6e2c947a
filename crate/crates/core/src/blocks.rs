//! Small building blocks shared by the encoder, the guidance module and the
//! decoder.

use ldg_tensor::nn::{init, visit_child, BatchNorm2d, Conv2d, Conv2dSpec, Module, Visitor};
use ldg_tensor::{Element, UnaryKind, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Hands out one independent random stream per module path.
#[derive(Debug, Clone, Copy)]
pub struct Init {
    pub seed: u64,
}

impl Init {
    pub fn rng(&self, path: &str) -> ChaCha8Rng {
        init::rng_for(self.seed, path)
    }

    pub fn conv<T: Element>(&self, path: &str, spec: Conv2dSpec) -> Result<Conv2d<T>> {
        Ok(Conv2d::new(spec, &mut self.rng(path))?)
    }
}

pub fn activate<T: Element>(x: Var<T>, act: Option<UnaryKind>) -> Var<T> {
    match act {
        Some(k) => x.unary(k),
        None => x,
    }
}

/// Bias-free convolution, batchnorm, optional activation.
pub struct ConvBn<T: Element> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub act: Option<UnaryKind>,
}

impl<T: Element> ConvBn<T> {
    pub fn new(init: &Init, path: &str, spec: Conv2dSpec, act: Option<UnaryKind>) -> Result<Self> {
        let spec = spec.bias(false);
        Ok(ConvBn {
            conv: init.conv(&init::join(path, "conv"), spec)?,
            bn: BatchNorm2d::new(spec.out_ch),
            act,
        })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let y = self.bn.forward(&self.conv.forward(x)?)?;
        Ok(activate(y, self.act))
    }
}

impl<T: Element> Module<T> for ConvBn<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        visit_child(v, "conv", &self.conv);
        visit_child(v, "bn", &self.bn);
    }
}
