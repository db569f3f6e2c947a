//! Bilinear upsampling by an integer factor, half-pixel centers
//! (`align_corners = false`).

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;
use crate::var::Var;

/// For each output coordinate: the two source taps and the weight of the
/// upper one.
fn taps<T: Element>(len: usize, scale: usize) -> Vec<(usize, usize, T)> {
    let inv = 1.0 / scale as f64;
    (0..len * scale)
        .map(|o| {
            let src = ((o as f64 + 0.5) * inv - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, T::lit(src - i0 as f64))
        })
        .collect()
}

pub fn upsample_bilinear<T: Element>(x: &Var<T>, scale: usize) -> Result<Var<T>> {
    if scale < 1 {
        return Err(TensorError::contract("upsample_bilinear", format!("scale must be >= 1, got {scale}")));
    }
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(TensorError::contract("upsample_bilinear", format!("expected an NCHW tensor, got shape {xs:?}")));
    }
    if scale == 1 {
        return x.reshape(&xs);
    }
    let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
    let (ho, wo) = (h * scale, w * scale);
    let ty = taps::<T>(h, scale);
    let tx = taps::<T>(w, scale);
    let mut out = vec![T::zero(); planes * ho * wo];
    {
        let xv = x.value();
        let xd = xv.data();
        for pl in 0..planes {
            let src = &xd[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out[pl * ho * wo..(pl + 1) * ho * wo];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
                let hy = T::one() - ly;
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let hx = T::one() - lx;
                    dst[oy * wo + ox] = hy * (hx * r0[x0] + lx * r0[x1]) + ly * (hx * r1[x0] + lx * r1[x1]);
                }
            }
        }
    }
    let value = Tensor::from_parts(out, vec![xs[0], xs[1], ho, wo]);
    Ok(Var::from_op(value, "upsample_bilinear", &[x], move |ctx| {
        let g = ctx.grad().data();
        let mut dx = vec![T::zero(); planes * h * w];
        for pl in 0..planes {
            let gp = &g[pl * ho * wo..(pl + 1) * ho * wo];
            let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let hy = T::one() - ly;
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let gv = gp[oy * wo + ox];
                    let hx = T::one() - lx;
                    dst[y0 * w + x0] += gv * hy * hx;
                    dst[y0 * w + x1] += gv * hy * lx;
                    dst[y1 * w + x0] += gv * ly * hx;
                    dst[y1 * w + x1] += gv * ly * lx;
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts(dx, xs.clone()))])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_one_is_identity() {
        let x = Var::<f64>::constant(Tensor::from_f64(&[0.0, 1.0, 2.0, 3.0], &[1, 1, 2, 2]).unwrap());
        let y = upsample_bilinear(&x, 1).unwrap();
        assert!(y.value().bit_eq(&x.value()));
    }

    #[test]
    fn rejects_zero_scale() {
        let x = Var::<f64>::constant(Tensor::ones(&[1, 1, 2, 2]));
        assert!(matches!(upsample_bilinear(&x, 0), Err(TensorError::Contract { .. })));
    }

    #[test]
    fn constant_stays_constant() {
        let x = Var::<f64>::constant(Tensor::full(&[1, 2, 3, 3], 0.7));
        let y = upsample_bilinear(&x, 3).unwrap();
        assert!(y.value().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }
}
