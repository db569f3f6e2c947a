use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;
use crate::var::Var;

fn split<T: Element>(op: &'static str, x: &Var<T>, axis: usize) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if axis >= s.len() {
        return Err(TensorError::Axis {
            op,
            axis,
            rank: s.len(),
        });
    }
    Ok((s[..axis].iter().product(), s[axis], s[axis + 1..].iter().product()))
}

/// Max-shifted softmax (or log-softmax) of every `(outer, inner)` fibre.
fn forward<T: Element>(x: &[T], outer: usize, d: usize, inner: usize, log: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * d + k) * inner + i;
            let m = (0..d).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
            let z: T = (0..d).map(|k| (x[at(k)] - m).exp()).sum();
            let lz = z.ln();
            for k in 0..d {
                let v = x[at(k)] - m;
                out[at(k)] = if log { v - lz } else { v.exp() / z };
            }
        }
    }
    out
}

impl<T: Element> Var<T> {
    pub fn softmax(&self, axis: usize) -> Result<Var<T>> {
        let (outer, d, inner) = split("softmax", self, axis)?;
        let value = Tensor::from_parts(forward(self.value().data(), outer, d, inner, false), self.shape());
        Ok(Var::from_op(value, "softmax", &[self], move |ctx| {
            let (g, y) = (ctx.grad().data(), ctx.output().data());
            let mut dx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * d + k) * inner + i;
                    let dot: T = (0..d).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..d {
                        dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            Ok(vec![Some(Tensor::from_parts(dx, ctx.output().shape().to_vec()))])
        }))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var<T>> {
        let (outer, d, inner) = split("log_softmax", self, axis)?;
        let value = Tensor::from_parts(forward(self.value().data(), outer, d, inner, true), self.shape());
        Ok(Var::from_op(value, "log_softmax", &[self], move |ctx| {
            let (g, y) = (ctx.grad().data(), ctx.output().data());
            let mut dx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * d + k) * inner + i;
                    let gs: T = (0..d).map(|k| g[at(k)]).sum();
                    for k in 0..d {
                        dx[at(k)] = g[at(k)] - y[at(k)].exp() * gs;
                    }
                }
            }
            Ok(vec![Some(Tensor::from_parts(dx, ctx.output().shape().to_vec()))])
        }))
    }
}
