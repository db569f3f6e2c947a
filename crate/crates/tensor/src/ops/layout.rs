use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::shape::{contiguous_strides, for_each_index2};
use crate::tensor::Tensor;
use crate::var::Var;

fn permute_data<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_strides = contiguous_strides(x.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let zeros = vec![0; axes.len()];
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    for_each_index2(&out_shape, &src_strides, &zeros, |i, src, _| out[i] = xd[src]);
    Tensor::from_parts(out, out_shape)
}

/// Extent of axes before `axis`, at `axis`, and after it.
fn split_at(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Element> Var<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let value = self.value().clone().reshape(shape)?;
        Ok(Var::from_op(value, "reshape", &[self], |ctx| {
            let g = ctx.grad().clone().reshape(ctx.input(0).shape())?;
            Ok(vec![Some(g)])
        }))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<T>> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::contract(
                "permute",
                format!("{axes:?} is not a permutation of {rank} axes"),
            ));
        }
        let value = permute_data(&self.value(), axes);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(Var::from_op(value, "permute", &[self], move |ctx| {
            Ok(vec![Some(permute_data(ctx.grad(), &inverse))])
        }))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::contract("concat", "no inputs"))?
            .shape();
        if axis >= first.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::shape("concat", &first, &s));
            }
            widths.push(s[axis]);
        }
        let total: usize = widths.iter().sum();
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_at(&out_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        {
            let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
            for o in 0..outer {
                for (v, &w) in values.iter().zip(&widths) {
                    let chunk = w * inner;
                    out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
                }
            }
        }
        let value = Tensor::from_parts(out, out_shape);
        Ok(Var::from_op(value, "concat", parts, move |ctx| {
            let g = ctx.grad().data();
            let mut grads: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(outer * w * inner)).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (dst, &w) in grads.iter_mut().zip(&widths) {
                    let chunk = w * inner;
                    dst.extend_from_slice(&g[offset..offset + chunk]);
                    offset += chunk;
                }
            }
            grads
                .into_iter()
                .enumerate()
                .map(|(i, d)| Ok(Some(Tensor::new(d, ctx.input(i).shape().to_vec())?)))
                .collect()
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(TensorError::contract(
                "narrow",
                format!("range {start}..{} exceeds extent {} of axis {axis}", start + len, shape[axis]),
            ));
        }
        let (outer, width, inner) = split_at(&shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        {
            let x = self.value();
            for o in 0..outer {
                let base = (o * width + start) * inner;
                out.extend_from_slice(&x.data()[base..base + len * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::from_parts(out, out_shape);
        Ok(Var::from_op(value, "narrow", &[self], move |ctx| {
            let g = ctx.grad().data();
            let mut d = vec![T::zero(); ctx.input(0).numel()];
            for o in 0..outer {
                let base = (o * width + start) * inner;
                d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            Ok(vec![Some(Tensor::new(d, ctx.input(0).shape().to_vec())?)])
        }))
    }
}
