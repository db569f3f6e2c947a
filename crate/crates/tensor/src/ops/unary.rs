use crate::element::Element;
use crate::tensor::Tensor;
use crate::var::Var;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Abs,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Square,
    Sigmoid,
    Silu,
    Relu,
    HardSwish,
    HardSigmoid,
    Softplus,
    Tanh,
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Element>(x: T) -> T {
    if x > T::lit(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl UnaryKind {
    pub fn name(self) -> &'static str {
        match self {
            UnaryKind::Abs => "abs",
            UnaryKind::Neg => "neg",
            UnaryKind::Exp => "exp",
            UnaryKind::Ln => "ln",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Square => "square",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Silu => "silu",
            UnaryKind::Relu => "relu",
            UnaryKind::HardSwish => "hardswish",
            UnaryKind::HardSigmoid => "hardsigmoid",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Tanh => "tanh",
        }
    }

    #[inline]
    pub fn apply<T: Element>(self, x: T) -> T {
        let three = T::lit(3.0);
        let six = T::lit(6.0);
        match self {
            UnaryKind::Abs => x.abs(),
            UnaryKind::Neg => -x,
            UnaryKind::Exp => x.exp(),
            UnaryKind::Ln => x.ln(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Square => x * x,
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Silu => x * sigmoid(x),
            UnaryKind::Relu => x.max(T::zero()),
            UnaryKind::HardSwish => x * (x + three).max(T::zero()).min(six) / six,
            UnaryKind::HardSigmoid => (x + three).max(T::zero()).min(six) / six,
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Tanh => x.tanh(),
        }
    }

    /// Derivative at input `x` given output `y`.
    #[inline]
    fn derivative<T: Element>(self, x: T, y: T) -> T {
        let zero = T::zero();
        let one = T::one();
        let three = T::lit(3.0);
        match self {
            // subgradient 0 at the kink
            UnaryKind::Abs => {
                if x > zero {
                    one
                } else if x < zero {
                    -one
                } else {
                    zero
                }
            }
            UnaryKind::Neg => -one,
            UnaryKind::Exp => y,
            UnaryKind::Ln => one / x,
            UnaryKind::Sqrt => T::lit(0.5) / y,
            UnaryKind::Square => x + x,
            UnaryKind::Sigmoid => y * (one - y),
            UnaryKind::Silu => {
                let s = sigmoid(x);
                s * (one + x * (one - s))
            }
            UnaryKind::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            UnaryKind::HardSwish => {
                if x <= -three {
                    zero
                } else if x >= three {
                    one
                } else {
                    (x + x + three) / T::lit(6.0)
                }
            }
            UnaryKind::HardSigmoid => {
                if x <= -three || x >= three {
                    zero
                } else {
                    one / T::lit(6.0)
                }
            }
            UnaryKind::Softplus => sigmoid(x),
            UnaryKind::Tanh => one - y * y,
        }
    }
}

impl<T: Element> Var<T> {
    pub fn unary(&self, kind: UnaryKind) -> Var<T> {
        let value = self.value().map(|x| kind.apply(x));
        Var::from_op(value, kind.name(), &[self], move |ctx| {
            let (x, y, g) = (ctx.input(0), ctx.output(), ctx.grad());
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&x, &y), &g)| g * kind.derivative(x, y))
                .collect();
            Ok(vec![Some(Tensor::new(data, x.shape().to_vec())?)])
        })
    }

    pub fn abs(&self) -> Var<T> {
        self.unary(UnaryKind::Abs)
    }
    pub fn neg(&self) -> Var<T> {
        self.unary(UnaryKind::Neg)
    }
    pub fn exp(&self) -> Var<T> {
        self.unary(UnaryKind::Exp)
    }
    pub fn ln(&self) -> Var<T> {
        self.unary(UnaryKind::Ln)
    }
    pub fn sqrt(&self) -> Var<T> {
        self.unary(UnaryKind::Sqrt)
    }
    pub fn square(&self) -> Var<T> {
        self.unary(UnaryKind::Square)
    }
    pub fn sigmoid(&self) -> Var<T> {
        self.unary(UnaryKind::Sigmoid)
    }
    pub fn silu(&self) -> Var<T> {
        self.unary(UnaryKind::Silu)
    }
    pub fn relu(&self) -> Var<T> {
        self.unary(UnaryKind::Relu)
    }
    pub fn hardswish(&self) -> Var<T> {
        self.unary(UnaryKind::HardSwish)
    }
    pub fn hardsigmoid(&self) -> Var<T> {
        self.unary(UnaryKind::HardSigmoid)
    }
    pub fn softplus(&self) -> Var<T> {
        self.unary(UnaryKind::Softplus)
    }
    pub fn tanh(&self) -> Var<T> {
        self.unary(UnaryKind::Tanh)
    }

    /// `a * x + b` with constant `a`, `b`.
    pub fn affine(&self, a: f64, b: f64) -> Var<T> {
        let (a, b) = (T::lit(a), T::lit(b));
        let value = self.value().map(|x| a * x + b);
        Var::from_op(value, "affine", &[self], move |ctx| {
            Ok(vec![Some(ctx.grad().map(|g| g * a))])
        })
    }

    pub fn add_scalar(&self, c: f64) -> Var<T> {
        self.affine(1.0, c)
    }

    pub fn mul_scalar(&self, c: f64) -> Var<T> {
        self.affine(c, 0.0)
    }

    /// `c - x`
    pub fn rsub_scalar(&self, c: f64) -> Var<T> {
        self.affine(-1.0, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Var<f64> {
        Var::parameter(Tensor::from_f64(data, &[data.len()]).unwrap())
    }

    #[test]
    fn abs_values_and_subgradient() {
        let x = v(&[-1.0, 2.0, 0.0]);
        let y = x.abs();
        assert_eq!(y.value().data(), &[1.0, 2.0, 0.0]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[-1.0, 1.0, 0.0]);
    }

    #[test]
    fn activation_reference_points() {
        assert_eq!(UnaryKind::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(UnaryKind::Silu.apply(0.0f64), 0.0);
        assert_eq!(UnaryKind::Relu.apply(-3.0f64), 0.0);
        assert_eq!(UnaryKind::HardSwish.apply(4.0f64), 4.0);
        assert_eq!(UnaryKind::HardSwish.apply(-4.0f64), 0.0);
        assert!((UnaryKind::Softplus.apply(0.0f64) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_range_is_open_unit_interval() {
        for &x in &[-30.0f64, -5.0, 0.0, 5.0, 30.0] {
            let y = UnaryKind::Sigmoid.apply(x);
            assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y}");
        }
    }
}
