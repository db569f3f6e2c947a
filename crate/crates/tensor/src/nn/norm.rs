//! Batch normalization and per-position channel layer normalization.

use std::cell::{Cell, RefCell};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;
use crate::var::Var;

pub const BN_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

/// Learnable scale/shift, running statistics and the train/eval switch.
pub struct BatchNorm2d<T: Element> {
    pub gamma: Var<T>,
    pub beta: Var<T>,
    pub running_mean: RefCell<Tensor<T>>,
    pub running_var: RefCell<Tensor<T>>,
    pub eps: f64,
    pub momentum: f64,
    training: Cell<bool>,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Var::parameter(Tensor::ones(&[channels])),
            beta: Var::parameter(Tensor::zeros(&[channels])),
            running_mean: RefCell::new(Tensor::zeros(&[channels])),
            running_var: RefCell::new(Tensor::ones(&[channels])),
            eps: NORM_EPS,
            momentum: BN_MOMENTUM,
            training: Cell::new(true),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn is_training(&self) -> bool {
        self.training.get()
    }

    pub fn set_training(&self, on: bool) {
        self.training.set(on);
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != self.channels() {
            return Err(TensorError::shape("batchnorm", &xs, &[0, self.channels(), 0, 0]));
        }
        if self.training.get() {
            self.forward_train(x, &xs)
        } else {
            self.forward_eval(x, &xs)
        }
    }

    fn forward_train(&self, x: &Var<T>, xs: &[usize]) -> Result<Var<T>> {
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        let m = n * plane;
        if m < 2 {
            return Err(TensorError::contract(
                "batchnorm",
                format!("train mode needs at least 2 values per channel, got N*H*W = {m}"),
            ));
        }
        let eps = T::lit(self.eps);
        let mf = T::lit(m as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let out = {
            let xv = x.value();
            let xd = xv.data();
            for ni in 0..n {
                for (ci, mu) in mean.iter_mut().enumerate() {
                    *mu += xd[(ni * c + ci) * plane..][..plane].iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= mf);
            for ni in 0..n {
                for ci in 0..c {
                    let mu = mean[ci];
                    var[ci] += xd[(ni * c + ci) * plane..][..plane]
                        .iter()
                        .map(|&v| (v - mu) * (v - mu))
                        .sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v /= mf);
            let g = self.gamma.value();
            let b = self.beta.value();
            let mut out = vec![T::zero(); xd.len()];
            for ni in 0..n {
                for ci in 0..c {
                    let inv = (var[ci] + eps).sqrt().recip();
                    let (scale, mu, shift) = (g.data()[ci] * inv, mean[ci], b.data()[ci]);
                    let o = (ni * c + ci) * plane;
                    for (dst, &src) in out[o..o + plane].iter_mut().zip(&xd[o..o + plane]) {
                        *dst = (src - mu) * scale + shift;
                    }
                }
            }
            out
        };
        {
            let mom = T::lit(self.momentum);
            let unbias = mf / (mf - T::one());
            let mut rm = self.running_mean.borrow_mut();
            let mut rv = self.running_var.borrow_mut();
            for ci in 0..c {
                let a = &mut rm.data_mut()[ci];
                *a = (T::one() - mom) * *a + mom * mean[ci];
                let b = &mut rv.data_mut()[ci];
                *b = (T::one() - mom) * *b + mom * var[ci] * unbias;
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let value = Tensor::from_parts(out, xs.to_vec());
        let shape = xs.to_vec();
        Ok(Var::from_op(value, "batchnorm", &[x, &self.gamma, &self.beta], move |ctx| {
            let g = ctx.grad().data();
            let xd = ctx.input(0).data();
            let gamma = ctx.input(1).data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            // per channel: sum(g) and sum(g * xhat)
            for ni in 0..n {
                for ci in 0..c {
                    let o = (ni * c + ci) * plane;
                    let (mu, inv) = (mean[ci], inv_std[ci]);
                    let mut sg = T::zero();
                    let mut sgx = T::zero();
                    for (&gv, &xv) in g[o..o + plane].iter().zip(&xd[o..o + plane]) {
                        sg += gv;
                        sgx += gv * (xv - mu) * inv;
                    }
                    dbeta[ci] += sg;
                    dgamma[ci] += sgx;
                }
            }
            let dx = ctx.needs_grad(0).then(|| {
                let mut dx = vec![T::zero(); xd.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let o = (ni * c + ci) * plane;
                        let (mu, inv) = (mean[ci], inv_std[ci]);
                        let k = gamma[ci] * inv / mf;
                        let (sg, sgx) = (dbeta[ci], dgamma[ci]);
                        for ((d, &gv), &xv) in dx[o..o + plane].iter_mut().zip(&g[o..o + plane]).zip(&xd[o..o + plane]) {
                            let xhat = (xv - mu) * inv;
                            *d = k * (mf * gv - sg - xhat * sgx);
                        }
                    }
                }
                Tensor::from_parts(dx, shape.clone())
            });
            Ok(vec![
                dx,
                Some(Tensor::from_parts(dgamma, vec![c])),
                Some(Tensor::from_parts(dbeta, vec![c])),
            ])
        }))
    }

    fn forward_eval(&self, x: &Var<T>, xs: &[usize]) -> Result<Var<T>> {
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        let eps = T::lit(self.eps);
        let mean = self.running_mean.borrow().data().to_vec();
        let inv_std: Vec<T> = self
            .running_var
            .borrow()
            .data()
            .iter()
            .map(|&v| (v + eps).sqrt().recip())
            .collect();
        let out = {
            let xv = x.value();
            let xd = xv.data();
            let g = self.gamma.value();
            let b = self.beta.value();
            let mut out = vec![T::zero(); xd.len()];
            for ni in 0..n {
                for ci in 0..c {
                    let scale = g.data()[ci] * inv_std[ci];
                    let (mu, shift) = (mean[ci], b.data()[ci]);
                    let o = (ni * c + ci) * plane;
                    for (dst, &src) in out[o..o + plane].iter_mut().zip(&xd[o..o + plane]) {
                        *dst = (src - mu) * scale + shift;
                    }
                }
            }
            out
        };
        let value = Tensor::from_parts(out, xs.to_vec());
        let shape = xs.to_vec();
        Ok(Var::from_op(value, "batchnorm_eval", &[x, &self.gamma, &self.beta], move |ctx| {
            let g = ctx.grad().data();
            let xd = ctx.input(0).data();
            let gamma = ctx.input(1).data();
            let mut dx = vec![T::zero(); xd.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for ni in 0..n {
                for ci in 0..c {
                    let o = (ni * c + ci) * plane;
                    let (mu, inv) = (mean[ci], inv_std[ci]);
                    let k = gamma[ci] * inv;
                    for i in o..o + plane {
                        dx[i] = g[i] * k;
                        dgamma[ci] += g[i] * (xd[i] - mu) * inv;
                        dbeta[ci] += g[i];
                    }
                }
            }
            Ok(vec![
                Some(Tensor::from_parts(dx, shape.clone())),
                Some(Tensor::from_parts(dgamma, vec![c])),
                Some(Tensor::from_parts(dbeta, vec![c])),
            ])
        }))
    }
}

/// Normalizes each spatial position of an NCHW tensor over its channels.
pub struct LayerNorm2d<T: Element> {
    pub gamma: Var<T>,
    pub beta: Var<T>,
    pub eps: f64,
}

impl<T: Element> LayerNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        LayerNorm2d {
            gamma: Var::parameter(Tensor::ones(&[channels])),
            beta: Var::parameter(Tensor::zeros(&[channels])),
            eps: NORM_EPS,
        }
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        let c = self.gamma.numel();
        if xs.len() != 4 || xs[1] != c {
            return Err(TensorError::shape("layernorm", &xs, &[0, c, 0, 0]));
        }
        let (n, plane) = (xs[0], xs[2] * xs[3]);
        let cf = T::lit(c as f64);
        let eps = T::lit(self.eps);
        let mut mean = vec![T::zero(); n * plane];
        let mut inv_std = vec![T::zero(); n * plane];
        let out = {
            let xv = x.value();
            let xd = xv.data();
            let g = self.gamma.value();
            let b = self.beta.value();
            let mut out = vec![T::zero(); xd.len()];
            for ni in 0..n {
                let mu = &mut mean[ni * plane..(ni + 1) * plane];
                let is = &mut inv_std[ni * plane..(ni + 1) * plane];
                for ci in 0..c {
                    for (m, &v) in mu.iter_mut().zip(&xd[(ni * c + ci) * plane..][..plane]) {
                        *m += v;
                    }
                }
                mu.iter_mut().for_each(|m| *m /= cf);
                for ci in 0..c {
                    for ((s, &m), &v) in is.iter_mut().zip(mu.iter()).zip(&xd[(ni * c + ci) * plane..][..plane]) {
                        *s += (v - m) * (v - m);
                    }
                }
                is.iter_mut().for_each(|s| *s = (*s / cf + eps).sqrt().recip());
                for ci in 0..c {
                    let o = (ni * c + ci) * plane;
                    let (gc, bc) = (g.data()[ci], b.data()[ci]);
                    for p in 0..plane {
                        out[o + p] = (xd[o + p] - mu[p]) * is[p] * gc + bc;
                    }
                }
            }
            out
        };
        let value = Tensor::from_parts(out, xs.clone());
        Ok(Var::from_op(value, "layernorm", &[x, &self.gamma, &self.beta], move |ctx| {
            let g = ctx.grad().data();
            let xd = ctx.input(0).data();
            let gamma = ctx.input(1).data();
            let mut dx = vec![T::zero(); xd.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut s1 = vec![T::zero(); plane];
            let mut s2 = vec![T::zero(); plane];
            for ni in 0..n {
                let mu = &mean[ni * plane..(ni + 1) * plane];
                let is = &inv_std[ni * plane..(ni + 1) * plane];
                s1.iter_mut().for_each(|v| *v = T::zero());
                s2.iter_mut().for_each(|v| *v = T::zero());
                for ci in 0..c {
                    let o = (ni * c + ci) * plane;
                    for p in 0..plane {
                        let xhat = (xd[o + p] - mu[p]) * is[p];
                        let gx = g[o + p] * gamma[ci];
                        s1[p] += gx;
                        s2[p] += gx * xhat;
                        dgamma[ci] += g[o + p] * xhat;
                        dbeta[ci] += g[o + p];
                    }
                }
                for ci in 0..c {
                    let o = (ni * c + ci) * plane;
                    for p in 0..plane {
                        let xhat = (xd[o + p] - mu[p]) * is[p];
                        let gx = g[o + p] * gamma[ci];
                        dx[o + p] = is[p] / cf * (cf * gx - s1[p] - xhat * s2[p]);
                    }
                }
            }
            Ok(vec![
                Some(Tensor::from_parts(dx, xs.clone())),
                Some(Tensor::from_parts(dgamma, vec![c])),
                Some(Tensor::from_parts(dbeta, vec![c])),
            ])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Var::constant(Tensor::<f64>::randn(&[4, 3, 5, 5], &mut rng).map(|v| 3.0 * v + 2.0));
        let bn = BatchNorm2d::new(3);
        let y = bn.forward(&x).unwrap();
        let yv = y.value();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| yv.data()[(n * 3 + c) * 25..][..25].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5, "{mean}");
            assert!((var * (1.0 + 1e-5 / var) - 1.0).abs() < 1e-4, "{var}");
        }
        assert!(bn.running_var.borrow().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn eval_identity_and_shift() {
        let bn = BatchNorm2d::<f64>::new(2);
        bn.set_training(false);
        let x = Var::constant(Tensor::from_f64(&[1.0, -2.0, 3.0, 0.5], &[1, 2, 1, 2]).unwrap());
        let y = bn.forward(&x).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in y.value().data().iter().zip(x.value().data()) {
            assert_eq!(*a, b * scale);
        }
        bn.beta.set_value(Tensor::full(&[2], 5.0)).unwrap();
        let z = bn.forward(&x).unwrap();
        for (a, b) in z.value().data().iter().zip(y.value().data()) {
            assert_eq!(*a - *b, 5.0);
        }
    }

    #[test]
    fn train_mode_rejects_single_value() {
        let bn = BatchNorm2d::<f64>::new(1);
        let x = Var::constant(Tensor::ones(&[1, 1, 1, 1]));
        assert!(matches!(bn.forward(&x), Err(TensorError::Contract { .. })));
        bn.set_training(false);
        assert!(bn.forward(&x).is_ok());
    }

    #[test]
    fn layernorm_standardizes_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Var::constant(Tensor::<f64>::randn(&[2, 6, 3, 3], &mut rng));
        let y = LayerNorm2d::new(6).forward(&x).unwrap();
        let yv = y.value();
        for n in 0..2 {
            for p in 0..9 {
                let vals: Vec<f64> = (0..6).map(|c| yv.data()[(n * 6 + c) * 9 + p]).collect();
                let mean = vals.iter().sum::<f64>() / 6.0;
                assert!(mean.abs() < 1e-12);
            }
        }
    }
}
