use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::shape::{broadcast_shape, broadcast_strides, for_each_index2};
use crate::tensor::Tensor;
use crate::var::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    #[inline(always)]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }
}

fn forward<T: Element>(kind: BinaryKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| TensorError::shape(kind.name(), a.shape(), b.shape()))?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<T> = if a.shape() == b.shape() {
        match kind {
            BinaryKind::Add => ad.iter().zip(bd).map(|(&x, &y)| x + y).collect(),
            BinaryKind::Sub => ad.iter().zip(bd).map(|(&x, &y)| x - y).collect(),
            BinaryKind::Mul => ad.iter().zip(bd).map(|(&x, &y)| x * y).collect(),
            BinaryKind::Div => ad.iter().zip(bd).map(|(&x, &y)| x / y).collect(),
        }
    } else {
        let n: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); n];
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        for_each_index2(&out_shape, &sa, &sb, |i, ia, ib| {
            out[i] = kind.apply(ad[ia], bd[ib]);
        });
        out
    };
    Ok(Tensor::from_parts(data, out_shape))
}

/// Sums `g` (shaped like the broadcast output) back down to `target`,
/// optionally scaling each term by `scale[ib]` read through `other` strides.
fn reduce_to<T: Element>(
    g: &Tensor<T>,
    target: &[usize],
    weight: Option<(&Tensor<T>, &[usize])>,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    let out_shape = g.shape();
    let mut acc = vec![T::zero(); target.iter().product()];
    let st = broadcast_strides(target, out_shape);
    let gd = g.data();
    match weight {
        Some((w, w_shape)) => {
            let sw = broadcast_strides(w_shape, out_shape);
            let wd = w.data();
            for_each_index2(out_shape, &st, &sw, |i, it, iw| {
                acc[it] += f(gd[i], wd[iw]);
            });
        }
        None => {
            let zeros = vec![0; out_shape.len()];
            for_each_index2(out_shape, &st, &zeros, |i, it, _| {
                acc[it] += gd[i];
            });
        }
    }
    Tensor::from_parts(acc, target.to_vec())
}

impl<T: Element> Var<T> {
    /// Broadcasting binary op (size-1 axes expand, right aligned).
    pub fn binary(&self, kind: BinaryKind, rhs: &Var<T>) -> Result<Var<T>> {
        let value = forward(kind, &self.value(), &rhs.value())?;
        Ok(Var::from_op(value, kind.name(), &[self, rhs], move |ctx| {
            let (a, b, g) = (ctx.input(0), ctx.input(1), ctx.grad());
            let same = a.shape() == b.shape();
            let ga = ctx.needs_grad(0).then(|| match kind {
                BinaryKind::Add | BinaryKind::Sub if same => g.clone(),
                BinaryKind::Add | BinaryKind::Sub => reduce_to(g, a.shape(), None, |x, _| x),
                BinaryKind::Mul => reduce_to(g, a.shape(), Some((b, b.shape())), |x, w| x * w),
                BinaryKind::Div => reduce_to(g, a.shape(), Some((b, b.shape())), |x, w| x / w),
            });
            let gb = ctx.needs_grad(1).then(|| match kind {
                BinaryKind::Add if same => g.clone(),
                BinaryKind::Add => reduce_to(g, b.shape(), None, |x, _| x),
                BinaryKind::Sub if same => g.map(|x| -x),
                BinaryKind::Sub => reduce_to(g, b.shape(), None, |x, _| x).map(|x| -x),
                BinaryKind::Mul => reduce_to(g, b.shape(), Some((a, a.shape())), |x, w| x * w),
                BinaryKind::Div => {
                    // d(a/b)/db = -(a/b)/b = -out/b
                    let out = ctx.output();
                    let ob = forward(BinaryKind::Div, out, b).expect("broadcast checked in forward");
                    reduce_to(g, b.shape(), Some((&ob, ob.shape())), |x, w| -x * w)
                }
            });
            Ok(vec![ga, gb])
        }))
    }

    pub fn add(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary(BinaryKind::Add, rhs)
    }

    pub fn sub(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary(BinaryKind::Sub, rhs)
    }

    pub fn mul(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary(BinaryKind::Mul, rhs)
    }

    pub fn div(&self, rhs: &Var<T>) -> Result<Var<T>> {
        self.binary(BinaryKind::Div, rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(data: &[f64], shape: &[usize]) -> Var<f64> {
        Var::parameter(Tensor::from_f64(data, shape).unwrap())
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let x = var(&[1.5, -2.0, 0.25], &[3]);
        let ones = Var::constant(Tensor::ones(&[3]));
        assert!(x.mul(&ones).unwrap().value().bit_eq(&x.value()));
    }

    #[test]
    fn incompatible_shapes_report_both() {
        let a = var(&[0.0; 6], &[2, 3]);
        let b = var(&[0.0; 2], &[2]);
        let err = a.add(&b).unwrap_err();
        assert_eq!(err, TensorError::shape("add", &[2, 3], &[2]));
        assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[2]"));
    }

    #[test]
    fn broadcast_gradients_sum_over_expanded_axes() {
        let a = var(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let b = var(&[10.0, 20.0], &[2, 1]);
        let y = a.mul(&b).unwrap().sum_all().unwrap();
        y.backward().unwrap();
        assert_eq!(b.grad().unwrap().data(), &[6.0, 15.0]);
        assert_eq!(a.grad().unwrap().data(), &[10.0, 10.0, 10.0, 20.0, 20.0, 20.0]);
    }

    #[test]
    fn sum_of_products_gradient() {
        let a = var(&[1.0, 2.0], &[2]);
        let b = var(&[3.0, 4.0], &[2]);
        a.mul(&b).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap().data(), &[3.0, 4.0]);
    }
}
