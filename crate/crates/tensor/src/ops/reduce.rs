use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::shape::{contiguous_strides, for_each_index2};
use crate::tensor::Tensor;
use crate::var::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

impl ReduceKind {
    fn name(self) -> &'static str {
        match self {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::Max => "max",
        }
    }
}

struct Plan {
    keep_shape: Vec<usize>,
    out_shape: Vec<usize>,
    // strides mapping an input position to its reduced group
    group_strides: Vec<usize>,
    count: usize,
}

fn plan(op: &'static str, shape: &[usize], axes: &[usize], keepdim: bool) -> Result<Plan> {
    let rank = shape.len();
    let mut reduced = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(TensorError::Axis { op, axis: a, rank });
        }
        reduced[a] = true;
    }
    let keep_shape: Vec<usize> = shape
        .iter()
        .zip(&reduced)
        .map(|(&d, &r)| if r { 1 } else { d })
        .collect();
    let keep_strides = contiguous_strides(&keep_shape);
    let group_strides = keep_strides
        .iter()
        .zip(&reduced)
        .map(|(&s, &r)| if r { 0 } else { s })
        .collect();
    let out_shape = if keepdim {
        keep_shape.clone()
    } else {
        shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect()
    };
    let count = shape
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| r)
        .map(|(&d, _)| d)
        .product();
    Ok(Plan {
        keep_shape,
        out_shape,
        group_strides,
        count,
    })
}

impl<T: Element> Var<T> {
    /// Reduces over `axes`. `Max` routes the gradient to the first maximal
    /// element (row-major) of each group.
    pub fn reduce(&self, kind: ReduceKind, axes: &[usize], keepdim: bool) -> Result<Var<T>> {
        let shape = self.shape();
        let p = plan(kind.name(), &shape, axes, keepdim)?;
        let groups: usize = p.keep_shape.iter().product();
        let in_strides = contiguous_strides(&shape);
        let x = self.value();
        let xd = x.data();
        let mut out = vec![T::zero(); groups];
        let mut argmax: Vec<usize> = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for_each_index2(&shape, &in_strides, &p.group_strides, |_, i, gi| out[gi] += xd[i]);
                if kind == ReduceKind::Mean {
                    let c = T::lit(p.count as f64);
                    out.iter_mut().for_each(|v| *v /= c);
                }
            }
            ReduceKind::Max => {
                argmax = vec![usize::MAX; groups];
                for_each_index2(&shape, &in_strides, &p.group_strides, |_, i, gi| {
                    if argmax[gi] == usize::MAX || xd[i] > out[gi] {
                        out[gi] = xd[i];
                        argmax[gi] = i;
                    }
                });
            }
        }
        drop(x);
        let value = Tensor::from_parts(out, p.out_shape.clone());
        let argmax = Rc::new(argmax);
        let count = p.count;
        let group_strides = p.group_strides;
        Ok(Var::from_op(value, kind.name(), &[self], move |ctx| {
            let g = ctx.grad().data();
            let shape = ctx.input(0).shape();
            let mut d = vec![T::zero(); ctx.input(0).numel()];
            match kind {
                ReduceKind::Sum | ReduceKind::Mean => {
                    let scale = if kind == ReduceKind::Mean {
                        T::one() / T::lit(count as f64)
                    } else {
                        T::one()
                    };
                    let strides = contiguous_strides(shape);
                    for_each_index2(shape, &strides, &group_strides, |_, i, gi| d[i] = g[gi] * scale);
                }
                ReduceKind::Max => {
                    for (gi, &i) in argmax.iter().enumerate() {
                        if i != usize::MAX {
                            d[i] += g[gi];
                        }
                    }
                }
            }
            Ok(vec![Some(Tensor::new(d, shape.to_vec())?)])
        }))
    }

    pub fn sum(&self, axes: &[usize], keepdim: bool) -> Result<Var<T>> {
        self.reduce(ReduceKind::Sum, axes, keepdim)
    }

    pub fn mean(&self, axes: &[usize], keepdim: bool) -> Result<Var<T>> {
        self.reduce(ReduceKind::Mean, axes, keepdim)
    }

    pub fn max(&self, axes: &[usize], keepdim: bool) -> Result<Var<T>> {
        self.reduce(ReduceKind::Max, axes, keepdim)
    }

    /// Sum of every element as a rank-0 scalar.
    pub fn sum_all(&self) -> Result<Var<T>> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.sum(&axes, false)
    }

    pub fn mean_all(&self) -> Result<Var<T>> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.mean(&axes, false)
    }
}
