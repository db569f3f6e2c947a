//! Difference-aware dynamic fusion decoder.

use ldg_tensor::nn::{init::join, upsample_bilinear, visit_child, Conv2d, Conv2dSpec, Module, Visitor};
use ldg_tensor::{Element, TensorError, Var};

use crate::blocks::Init;
use crate::config::ModelConfig;
use crate::dgm::abs_diff;
use crate::error::Result;
use crate::vssm::VssBlock;

/// `|f_pre - f_post|` between the two streams' features at one level.
pub fn refined_diff<T: Element>(f_pre: &Var<T>, f_post: &Var<T>) -> Result<Var<T>> {
    abs_diff(f_pre, f_post)
}

/// `f + f * f_diff_hat`.
pub fn diff_weighting<T: Element>(f: &Var<T>, f_diff_hat: &Var<T>) -> Result<Var<T>> {
    if f.shape() != f_diff_hat.shape() {
        return Err(TensorError::shape("diff_weighting", &f.shape(), &f_diff_hat.shape()).into());
    }
    Ok(f.add(&f.mul(f_diff_hat)?)?)
}

/// `attn * p' + (1 - attn) * proj + p'`, `attn` broadcast over channels.
pub fn dynamic_fuse<T: Element>(p_prime: &Var<T>, proj: &Var<T>, attn: &Var<T>) -> Result<Var<T>> {
    if p_prime.shape() != proj.shape() {
        return Err(TensorError::shape("dynamic_fuse", &p_prime.shape(), &proj.shape()).into());
    }
    let a = attn.mul(p_prime)?;
    let b = attn.rsub_scalar(1.0).mul(proj)?;
    Ok(a.add(&b)?.add(p_prime)?)
}

/// Intermediate values of one decoder level, kept for inspection.
pub struct LevelTrace<T: Element> {
    pub f_diff_hat: Option<Var<T>>,
    pub diff_attn: Option<Var<T>>,
}

pub struct DadfLevel<T: Element> {
    pub reduce: Conv2d<T>,
    pub vss: VssBlock<T>,
    /// Present only with difference-aware fusion enabled.
    pub diff_proj: Option<Conv2d<T>>,
    pub attn: Option<Conv2d<T>>,
}

impl<T: Element> DadfLevel<T> {
    pub fn new(init: &Init, path: &str, ch: usize, cfg: &ModelConfig) -> Result<Self> {
        let c_dec = cfg.c_dec;
        let inner = cfg.ssm_expand * c_dec;
        Ok(DadfLevel {
            reduce: init.conv(&join(path, "reduce"), Conv2dSpec::new(2 * ch, c_dec, 1))?,
            vss: VssBlock::new(
                init,
                &join(path, "vss"),
                c_dec,
                cfg.ssm_expand,
                cfg.state_dim,
                Some(cfg.dt_rank_for(inner)),
                cfg.shared_direction_proj,
            )?,
            diff_proj: cfg
                .dadf
                .then(|| init.conv(&join(path, "diff_proj"), Conv2dSpec::new(ch, c_dec, 1).bias(false)))
                .transpose()?,
            attn: cfg
                .dadf
                .then(|| init.conv(&join(path, "attn"), Conv2dSpec::new(c_dec, 1, 3).padding(1)))
                .transpose()?,
        })
    }

    /// `P'`: the state-space fusion of the concatenated pair.
    pub fn fuse_vss(&self, w_pre: &Var<T>, w_post: &Var<T>) -> Result<Var<T>> {
        if w_pre.shape() != w_post.shape() {
            return Err(TensorError::shape("fuse_vss", &w_pre.shape(), &w_post.shape()).into());
        }
        let x = self.reduce.forward(&Var::concat(&[w_pre, w_post], 1)?)?;
        self.vss.forward(&x)
    }

    pub fn forward(&self, f_pre: &Var<T>, f_post: &Var<T>) -> Result<(Var<T>, LevelTrace<T>)> {
        let (Some(diff_proj), Some(attn_conv)) = (&self.diff_proj, &self.attn) else {
            let p = self.fuse_vss(f_pre, f_post)?;
            return Ok((
                p,
                LevelTrace {
                    f_diff_hat: None,
                    diff_attn: None,
                },
            ));
        };
        let hat = refined_diff(f_pre, f_post)?;
        let p_prime = self.fuse_vss(&diff_weighting(f_pre, &hat)?, &diff_weighting(f_post, &hat)?)?;
        let proj = diff_proj.forward(&hat)?;
        let attn = attn_conv.forward(&proj)?.sigmoid();
        let p = dynamic_fuse(&p_prime, &proj, &attn)?;
        Ok((
            p,
            LevelTrace {
                f_diff_hat: Some(hat),
                diff_attn: Some(attn),
            },
        ))
    }
}

impl<T: Element> Module<T> for DadfLevel<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        visit_child(v, "reduce", &self.reduce);
        visit_child(v, "vss", &self.vss);
        if let Some(c) = &self.diff_proj {
            visit_child(v, "diff_proj", c);
        }
        if let Some(c) = &self.attn {
            visit_child(v, "attn", c);
        }
    }
}

pub struct Decoder<T: Element> {
    pub levels: Vec<DadfLevel<T>>,
    pub head: Conv2d<T>,
}

impl<T: Element> Decoder<T> {
    pub const CLASSES: usize = 2;

    pub fn new(init: &Init, path: &str, widths: [usize; 4], cfg: &ModelConfig) -> Result<Self> {
        let levels = widths
            .iter()
            .enumerate()
            .map(|(j, &ch)| DadfLevel::new(init, &join(path, &format!("level{}", j + 1)), ch, cfg))
            .collect::<Result<Vec<_>>>()?;
        let head = init.conv(&join(path, "head"), Conv2dSpec::new(cfg.c_dec, Self::CLASSES, 1))?;
        // Decoder activations are large at init; a zero classifier starts
        // training from even logits.
        head.weight.update_value(|w| w.data_mut().fill(T::zero()));
        Ok(Decoder { levels, head })
    }

    /// Deep-to-shallow cascade over four levels of pre/post features, then
    /// the classifier upsampled by 4 to input resolution.
    pub fn forward(&self, pre: &[Var<T>], post: &[Var<T>]) -> Result<(Var<T>, Vec<LevelTrace<T>>)> {
        if pre.len() != self.levels.len() || post.len() != self.levels.len() {
            return Err(TensorError::contract("decoder", format!("expected {} levels per stream", self.levels.len())).into());
        }
        let mut traces = Vec::with_capacity(self.levels.len());
        let mut cascade: Option<Var<T>> = None;
        for j in (0..self.levels.len()).rev() {
            let (p, trace) = self.levels[j].forward(&pre[j], &post[j])?;
            traces.push(trace);
            cascade = Some(match cascade {
                None => p,
                Some(deeper) => p.add(&upsample_bilinear(&deeper, 2)?)?,
            });
        }
        traces.reverse();
        let c1 = cascade.expect("at least one level");
        let logits = upsample_bilinear(&self.head.forward(&c1)?, 4)?;
        Ok((logits, traces))
    }
}

impl<T: Element> Module<T> for Decoder<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        for (j, l) in self.levels.iter().enumerate() {
            visit_child(v, &format!("level{}", j + 1), l);
        }
        visit_child(v, "head", &self.head);
    }
}
