//! Four-direction selective-scan core and the visual state-space block.

use ldg_tensor::nn::{init::join, visit_child, Conv2d, Conv2dSpec, LayerNorm2d, Module, Param, Visitor};
use ldg_tensor::{Element, Tensor, TensorError, Var};
use rand::Rng;

use crate::blocks::Init;
use crate::error::Result;
use crate::scan::{selective_scan, ScanDirection, ScanInputs};

pub const DT_MIN: f64 = 0.01;
pub const DT_MAX: f64 = 0.1;

/// Inverse of softplus, for initializing biases.
fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub struct Ss2d<T: Element> {
    pub channels: usize,
    pub state_dim: usize,
    pub dt_rank: usize,
    /// Per-position projection to `[dt (R) | B (N) | C (N)]` for every
    /// direction block, laid out as all dt blocks, then all B, then all C.
    pub x_proj: Conv2d<T>,
    /// Grouped 1x1 from each direction's dt rank to its channels.
    pub dt_proj: Conv2d<T>,
    pub a_log: Param<T>,
    pub d: Param<T>,
    pub shared: bool,
}

impl<T: Element> Ss2d<T> {
    pub fn new(init: &Init, path: &str, channels: usize, state_dim: usize, dt_rank: usize, shared: bool) -> Result<Self> {
        let k = if shared { 1 } else { ScanDirection::ALL.len() };
        let (r, n) = (dt_rank, state_dim);
        let x_proj = Conv2d::new(Conv2dSpec::new(channels, k * (r + 2 * n), 1).bias(false), &mut init.rng(&join(path, "x_proj")))?;
        let dt_spec = Conv2dSpec::new(k * r, k * channels, 1).groups(k);
        let mut rng = init.rng(&join(path, "dt_proj"));
        let std = (r as f64).powf(-0.5);
        let w = Tensor::rand_uniform(&dt_spec.weight_shape(), -std, std, &mut rng);
        let bias: Vec<f64> = (0..k * channels)
            .map(|_| {
                let dt = (rng.gen_range(DT_MIN.ln()..DT_MAX.ln())).exp();
                inv_softplus(dt)
            })
            .collect();
        let dt_proj = Conv2d {
            spec: dt_spec,
            weight: Var::parameter(w),
            bias: Some(Var::parameter(Tensor::from_f64(&bias, &[k * channels])?)),
        };
        let a_log: Vec<f64> = (0..channels).flat_map(|_| (1..=n).map(|i| (i as f64).ln())).collect();
        Ok(Ss2d {
            channels,
            state_dim: n,
            dt_rank: r,
            x_proj,
            dt_proj,
            a_log: Param::new(Tensor::from_f64(&a_log, &[channels, n])?),
            d: Param::new(Tensor::ones(&[channels])),
            shared,
        })
    }

    fn blocks(&self) -> usize {
        if self.shared {
            1
        } else {
            ScanDirection::ALL.len()
        }
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != self.channels {
            return Err(TensorError::shape("ss2d", &xs, &[0, self.channels, 0, 0]).into());
        }
        let (k, r, n) = (self.blocks(), self.dt_rank, self.state_dim);
        let proj = self.x_proj.forward(x)?;
        let dt_low = proj.narrow(1, 0, k * r)?;
        let mut b = proj.narrow(1, k * r, k * n)?;
        let mut c = proj.narrow(1, k * r + k * n, k * n)?;
        let mut delta = self.dt_proj.forward(&dt_low)?.softplus();
        if self.shared {
            let dirs = ScanDirection::ALL.len();
            let rep = |v: &Var<T>| Var::concat(&vec![v; dirs], 1);
            delta = rep(&delta)?;
            b = rep(&b)?;
            c = rep(&c)?;
        }
        let a = self.a_log.0.exp().neg();
        selective_scan(
            ScanInputs {
                u: x,
                delta: &delta,
                a: &a,
                b: &b,
                c: &c,
                d: &self.d.0,
            },
            &ScanDirection::ALL,
        )
    }
}

impl<T: Element> Module<T> for Ss2d<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        visit_child(v, "x_proj", &self.x_proj);
        visit_child(v, "dt_proj", &self.dt_proj);
        visit_child(v, "a_log", &self.a_log);
        visit_child(v, "d", &self.d);
    }
}

/// `x + proj_out(ss2d(silu(dw(a))) * silu(b))` with `[a | b] = proj_in(ln(x))`.
pub struct VssBlock<T: Element> {
    pub channels: usize,
    pub inner: usize,
    pub norm: LayerNorm2d<T>,
    pub proj_in: Conv2d<T>,
    pub dwconv: Conv2d<T>,
    pub ss2d: Ss2d<T>,
    pub proj_out: Conv2d<T>,
}

impl<T: Element> VssBlock<T> {
    pub fn new(
        init: &Init,
        path: &str,
        channels: usize,
        expand: usize,
        state_dim: usize,
        dt_rank: Option<usize>,
        shared: bool,
    ) -> Result<Self> {
        let inner = expand * channels;
        let r = dt_rank.unwrap_or_else(|| inner.div_ceil(16));
        Ok(VssBlock {
            channels,
            inner,
            norm: LayerNorm2d::new(channels),
            proj_in: init.conv(&join(path, "proj_in"), Conv2dSpec::new(channels, 2 * inner, 1).bias(false))?,
            dwconv: init.conv(&join(path, "dwconv"), Conv2dSpec::depthwise(inner, 3, 1))?,
            ss2d: Ss2d::new(init, &join(path, "ss2d"), inner, state_dim, r, shared)?,
            proj_out: init.conv(&join(path, "proj_out"), Conv2dSpec::new(inner, channels, 1).bias(false))?,
        })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != self.channels {
            return Err(TensorError::shape("vss_block", &xs, &[0, self.channels, 0, 0]).into());
        }
        let h = self.proj_in.forward(&self.norm.forward(x)?)?;
        let a = h.narrow(1, 0, self.inner)?;
        let gate = h.narrow(1, self.inner, self.inner)?.silu();
        let s = self.ss2d.forward(&self.dwconv.forward(&a)?.silu())?;
        let y = self.proj_out.forward(&s.mul(&gate)?)?;
        Ok(x.add(&y)?)
    }
}

impl<T: Element> Module<T> for VssBlock<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        visit_child(v, "norm", &self.norm);
        visit_child(v, "proj_in", &self.proj_in);
        visit_child(v, "dwconv", &self.dwconv);
        visit_child(v, "ss2d", &self.ss2d);
        visit_child(v, "proj_out", &self.proj_out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dt_bias_lands_in_range() {
        let init = Init { seed: 1 };
        let s = Ss2d::<f64>::new(&init, "s", 8, 4, 1, false).unwrap();
        for &b in s.dt_proj.bias.as_ref().unwrap().value().data() {
            let sp = b.exp().ln_1p();
            assert!((DT_MIN - 1e-12..=DT_MAX + 1e-12).contains(&sp), "{sp}");
        }
        assert_eq!(s.a_log.0.value().data()[..4], [0.0, 2f64.ln(), 3f64.ln(), 4f64.ln()]);
    }
}
