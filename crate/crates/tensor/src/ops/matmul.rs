use crate::element::{gemm, Element, MatRef};
use crate::error::{Result, TensorError};
use crate::stats;
use crate::tensor::Tensor;
use crate::var::Var;

impl<T: Element> Var<T> {
    /// `[M, K] x [K, N] -> [M, N]`
    pub fn matmul(&self, rhs: &Var<T>) -> Result<Var<T>> {
        let (m, k, n) = {
            let (a, b) = (self.value(), rhs.value());
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(TensorError::shape("matmul", a.shape(), b.shape()));
            }
            (a.shape()[0], a.shape()[1], b.shape()[1])
        };
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::new(self.value().data(), m, k),
            MatRef::new(rhs.value().data(), k, n),
            &mut out,
            false,
        );
        stats::add_flops(2 * (m * k * n) as u64);
        let value = Tensor::from_parts(out, vec![m, n]);
        Ok(Var::from_op(value, "matmul", &[self, rhs], move |ctx| {
            let (a, b, g) = (ctx.input(0), ctx.input(1), ctx.grad());
            let ga = ctx.needs_grad(0).then(|| {
                let mut d = vec![T::zero(); m * k];
                gemm(MatRef::new(g.data(), m, n), MatRef::t(b.data(), n, k), &mut d, false);
                Tensor::from_parts(d, vec![m, k])
            });
            let gb = ctx.needs_grad(1).then(|| {
                let mut d = vec![T::zero(); k * n];
                gemm(MatRef::t(a.data(), k, m), MatRef::new(g.data(), m, n), &mut d, false);
                Tensor::from_parts(d, vec![k, n])
            });
            Ok(vec![ga, gb])
        }))
    }
}
