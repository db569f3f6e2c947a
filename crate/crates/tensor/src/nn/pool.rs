//! Windowed and global pooling over NCHW tensors.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::ReduceKind;
use crate::tensor::Tensor;
use crate::var::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    GlobalAvg,
    GlobalMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn new(window: usize, stride: usize) -> Self {
        PoolSpec {
            window,
            stride,
            padding: 0,
        }
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 {
            return Err(TensorError::contract("pool", "window and stride must be positive"));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.window || pw < self.window {
            return Err(TensorError::OutputSize {
                op: "pool",
                input: vec![h, w],
                window: vec![self.window, self.window],
                padding: self.padding,
            });
        }
        Ok((
            (ph - self.window) / self.stride + 1,
            (pw - self.window) / self.stride + 1,
        ))
    }
}

fn check_nchw<T: Element>(op: &'static str, x: &Var<T>) -> Result<Vec<usize>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(TensorError::contract(op, format!("expected an NCHW tensor, got shape {s:?}")));
    }
    Ok(s)
}

/// Pools `x: [N,C,H,W]`. Global kinds ignore `spec` and return `[N,C,1,1]`.
/// Average pooling divides by the full window size, padding included.
pub fn pool<T: Element>(kind: PoolKind, x: &Var<T>, spec: PoolSpec) -> Result<Var<T>> {
    match kind {
        PoolKind::GlobalAvg => global_avg_pool(x),
        PoolKind::GlobalMax => global_max_pool(x),
        PoolKind::Max | PoolKind::Avg => window_pool(kind == PoolKind::Max, x, spec),
    }
}

pub fn global_avg_pool<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    check_nchw("global_avg_pool", x)?;
    x.reduce(ReduceKind::Mean, &[2, 3], true)
}

pub fn global_max_pool<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    check_nchw("global_max_pool", x)?;
    x.reduce(ReduceKind::Max, &[2, 3], true)
}

/// Per-position maximum over channels, `[N,1,H,W]`.
pub fn channel_max<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    check_nchw("channel_max", x)?;
    x.reduce(ReduceKind::Max, &[1], true)
}

/// Per-position mean over channels, `[N,1,H,W]`.
pub fn channel_mean<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    check_nchw("channel_mean", x)?;
    x.reduce(ReduceKind::Mean, &[1], true)
}

fn window_pool<T: Element>(is_max: bool, x: &Var<T>, spec: PoolSpec) -> Result<Var<T>> {
    let xs = check_nchw("pool", x)?;
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (ho, wo) = spec.output_hw(h, w)?;
    let (k, s, p) = (spec.window, spec.stride, spec.padding);
    let planes = n * c;
    let mut out = vec![T::zero(); planes * ho * wo];
    // index into the input plane of each max; usize::MAX marks an all-padding window
    let mut arg = if is_max { vec![usize::MAX; out.len()] } else { Vec::new() };
    let inv = T::one() / T::lit((k * k) as f64);
    {
        let xv = x.value();
        let xd = xv.data();
        for pl in 0..planes {
            let src = &xd[pl * h * w..(pl + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = pl * ho * wo + oy * wo + ox;
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    let mut acc = T::zero();
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            let v = src[i];
                            if v > best || best_i == usize::MAX {
                                best = v;
                                best_i = i;
                            }
                            acc += v;
                        }
                    }
                    if is_max {
                        // padding behaves as -inf, so a window touching the
                        // image always picks an image value
                        out[o] = if best_i == usize::MAX { T::zero() } else { best };
                        arg[o] = best_i;
                    } else {
                        out[o] = acc * inv;
                    }
                }
            }
        }
    }
    let value = Tensor::from_parts(out, vec![n, c, ho, wo]);
    let name = if is_max { "max_pool" } else { "avg_pool" };
    Ok(Var::from_op(value, name, &[x], move |ctx| {
        let g = ctx.grad().data();
        let mut dx = vec![T::zero(); planes * h * w];
        for pl in 0..planes {
            let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = pl * ho * wo + oy * wo + ox;
                    if is_max {
                        if arg[o] != usize::MAX {
                            dst[arg[o]] += g[o];
                        }
                        continue;
                    }
                    let gv = g[o] * inv;
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += gv;
                            }
                        }
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts(dx, xs.clone()))])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(data: &[f64], shape: &[usize]) -> Var<f64> {
        Var::parameter(Tensor::from_f64(data, shape).unwrap())
    }

    #[test]
    fn max_window_two() {
        let x = var(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        let y = pool(PoolKind::Max, &x, PoolSpec::new(2, 2)).unwrap();
        assert_eq!(y.value().data(), &[4.0]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn avg_counts_padding() {
        let x = var(&[4.0], &[1, 1, 1, 1]);
        let y = pool(PoolKind::Avg, &x, PoolSpec::new(2, 1).padding(1)).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 2, 2]);
        assert_eq!(y.value().data(), &[1.0; 4]);
    }

    #[test]
    fn global_avg_of_ones() {
        let x = Var::<f64>::constant(Tensor::ones(&[1, 3, 4, 4]));
        let y = pool(PoolKind::GlobalAvg, &x, PoolSpec::new(1, 1)).unwrap();
        assert_eq!(y.shape(), vec![1, 3, 1, 1]);
        assert_eq!(y.value().data(), &[1.0; 3]);
    }

    #[test]
    fn window_too_large() {
        let x = Var::<f64>::constant(Tensor::ones(&[1, 1, 2, 2]));
        let err = pool(PoolKind::Max, &x, PoolSpec::new(5, 1).padding(1)).unwrap_err();
        assert!(matches!(err, TensorError::OutputSize { .. }), "{err}");
    }

    #[test]
    fn channel_max_picks_hot_channel() {
        let mut data = vec![0.0; 2 * 3 * 3];
        for v in &mut data[9..] {
            *v = 2.5;
        }
        data[9 + 4] = 7.0;
        let x = var(&data, &[1, 2, 3, 3]);
        let y = channel_max(&x).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 3, 3]);
        assert_eq!(y.value().data(), &data[9..]);
    }
}
