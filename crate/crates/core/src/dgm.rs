//! Difference guidance: the adapter that aligns difference features and the
//! spatial/channel attention that turns them into a multiplicative gate on
//! the original-image features.

use ldg_tensor::nn::{
    channel_max, channel_mean, global_avg_pool, init::join, visit_child, Conv2d, Conv2dSpec, Linear, Module, Param,
    Visitor,
};
use ldg_tensor::{Element, Tensor, TensorError, UnaryKind, Var};

use crate::blocks::{ConvBn, Init};
use crate::config::ChannelGate;
use crate::error::Result;

/// `|pre - post|`, per pixel and channel.
pub fn abs_diff<T: Element>(pre: &Var<T>, post: &Var<T>) -> Result<Var<T>> {
    if pre.shape() != post.shape() {
        return Err(TensorError::shape("abs_diff", &pre.shape(), &post.shape()).into());
    }
    Ok(pre.sub(post)?.abs())
}

/// Residual depthwise-separable dilated block:
/// `f + pw(dw(align(f)))`, batchnorm and SiLU after `align` and `dw`.
pub struct DifferenceAdapter<T: Element> {
    pub align: ConvBn<T>,
    pub depthwise: ConvBn<T>,
    pub pointwise: Conv2d<T>,
    /// Projection for the residual path when widths differ.
    pub shortcut: Option<Conv2d<T>>,
}

impl<T: Element> DifferenceAdapter<T> {
    pub fn new(init: &Init, path: &str, diff_ch: usize, ch: usize) -> Result<Self> {
        let silu = Some(UnaryKind::Silu);
        Ok(DifferenceAdapter {
            align: ConvBn::new(init, &join(path, "align"), Conv2dSpec::new(diff_ch, ch, 1), silu)?,
            depthwise: ConvBn::new(init, &join(path, "depthwise"), Conv2dSpec::depthwise(ch, 3, 2), silu)?,
            pointwise: init.conv(&join(path, "pointwise"), Conv2dSpec::new(ch, ch, 1))?,
            shortcut: (diff_ch != ch)
                .then(|| init.conv(&join(path, "shortcut"), Conv2dSpec::new(diff_ch, ch, 1).bias(false)))
                .transpose()?,
        })
    }

    pub fn forward(&self, f: &Var<T>) -> Result<Var<T>> {
        let g = self.pointwise.forward(&self.depthwise.forward(&self.align.forward(f)?)?)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(f)?,
            None => f.clone(),
        };
        Ok(skip.add(&g)?)
    }
}

impl<T: Element> Module<T> for DifferenceAdapter<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        visit_child(v, "align", &self.align);
        visit_child(v, "depthwise", &self.depthwise);
        visit_child(v, "pointwise", &self.pointwise);
        if let Some(s) = &self.shortcut {
            visit_child(v, "shortcut", s);
        }
    }
}

/// Attention maps produced alongside the gate, kept for inspection.
pub struct ScaMaps<T: Element> {
    /// `[N,1,H,W]`, in (0,1).
    pub spatial: Var<T>,
    /// `[N,C,1,1]`.
    pub channel: Var<T>,
}

pub struct SpatialChannelAttention<T: Element> {
    pub spatial: Conv2d<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub gate: ChannelGate,
    /// Scalar scale of the whole attention product, zero at initialization.
    pub alpha: Param<T>,
}

impl<T: Element> SpatialChannelAttention<T> {
    pub fn new(init: &Init, path: &str, ch: usize, reduction: usize, gate: ChannelGate) -> Result<Self> {
        let hidden = (ch / reduction).max(8);
        Ok(SpatialChannelAttention {
            spatial: init.conv(&join(path, "spatial"), Conv2dSpec::new(2, 1, 3).padding(1))?,
            fc1: Linear::new(ch, hidden, true, &mut init.rng(&join(path, "fc1"))),
            fc2: Linear::new(hidden, ch, true, &mut init.rng(&join(path, "fc2"))),
            gate,
            alpha: Param::new(Tensor::zeros(&[1])),
        })
    }

    pub fn spatial_map(&self, f: &Var<T>) -> Result<Var<T>> {
        let stats = Var::concat(&[&channel_max(f)?, &channel_mean(f)?], 1)?;
        Ok(self.spatial.forward(&stats)?.sigmoid())
    }

    pub fn channel_map(&self, f: &Var<T>) -> Result<Var<T>> {
        let s = f.shape();
        let pooled = global_avg_pool(f)?.reshape(&[s[0], s[1]])?;
        let h = self.fc1.forward(&pooled)?.silu();
        let a = self.fc2.forward(&h)?;
        let a = match self.gate {
            ChannelGate::Silu => a.silu(),
            ChannelGate::Sigmoid => a.sigmoid(),
        };
        Ok(a.reshape(&[s[0], s[1], 1, 1])?)
    }

    /// `alpha * A_spatial * A_channel * f_da`.
    pub fn forward(&self, f_da: &Var<T>) -> Result<(Var<T>, ScaMaps<T>)> {
        let spatial = self.spatial_map(f_da)?;
        let channel = self.channel_map(f_da)?;
        let out = f_da.mul(&spatial)?.mul(&channel)?.mul(&self.alpha.0)?;
        Ok((out, ScaMaps { spatial, channel }))
    }
}

impl<T: Element> Module<T> for SpatialChannelAttention<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        visit_child(v, "spatial", &self.spatial);
        visit_child(v, "fc1", &self.fc1);
        visit_child(v, "fc2", &self.fc2);
        visit_child(v, "alpha", &self.alpha);
    }
}

/// `f_ori * (1 + f_sca)`: identity when the gate is zero.
pub fn dgm_fuse<T: Element>(f_ori: &Var<T>, f_sca: &Var<T>) -> Result<Var<T>> {
    if f_ori.shape() != f_sca.shape() {
        return Err(TensorError::shape("dgm_fuse", &f_ori.shape(), &f_sca.shape()).into());
    }
    Ok(f_ori.mul(&f_sca.add_scalar(1.0))?)
}

/// One guidance module, shared by the pre and post streams of its layer.
pub struct Dgm<T: Element> {
    pub adapter: DifferenceAdapter<T>,
    pub sca: SpatialChannelAttention<T>,
}

impl<T: Element> Dgm<T> {
    pub fn new(init: &Init, path: &str, diff_ch: usize, ch: usize, reduction: usize, gate: ChannelGate) -> Result<Self> {
        Ok(Dgm {
            adapter: DifferenceAdapter::new(init, &join(path, "adapter"), diff_ch, ch)?,
            sca: SpatialChannelAttention::new(init, &join(path, "sca"), ch, reduction, gate)?,
        })
    }

    /// The gate `F_SCA` computed from one level of difference features.
    pub fn gate(&self, f_diff: &Var<T>) -> Result<(Var<T>, ScaMaps<T>)> {
        self.sca.forward(&self.adapter.forward(f_diff)?)
    }
}

impl<T: Element> Module<T> for Dgm<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        visit_child(v, "adapter", &self.adapter);
        visit_child(v, "sca", &self.sca);
    }
}
