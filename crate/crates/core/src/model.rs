//! The full network: difference-guided Siamese encoder and fusion decoder.

use ldg_tensor::nn::{self, visit_child, Module, Visitor};
use ldg_tensor::{Element, TensorError, Var};

use crate::backbone::Backbone;
use crate::blocks::Init;
use crate::config::ModelConfig;
use crate::decoder::{Decoder, LevelTrace};
use crate::dgm::{abs_diff, dgm_fuse, Dgm, ScaMaps};
use crate::error::Result;

/// Number of encoder layers that receive difference guidance.
pub const GUIDED_LAYERS: usize = 3;

/// Input sides must divide by the deepest feature stride.
pub const INPUT_MULTIPLE: usize = 32;

pub struct EncoderOutput<T: Element> {
    /// Four levels per stream; the first three modulated, the last raw.
    pub pre: Vec<Var<T>>,
    pub post: Vec<Var<T>>,
    /// Difference-branch features, empty without guidance.
    pub diff: Vec<Var<T>>,
    pub attention: Vec<ScaMaps<T>>,
}

pub struct ModelOutput<T: Element> {
    /// `[N, 2, H, W]`.
    pub logits: Var<T>,
    pub encoder: EncoderOutput<T>,
    pub levels: Vec<LevelTrace<T>>,
}

pub struct LdgNet<T: Element> {
    pub config: ModelConfig,
    /// Siamese original-image branch, shared by both dates.
    pub encoder: Backbone<T>,
    pub diff_encoder: Option<Backbone<T>>,
    pub dgm: Vec<Dgm<T>>,
    pub decoder: Decoder<T>,
}

impl<T: Element> LdgNet<T> {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let init = Init { seed };
        let encoder = Backbone::new(&config.backbone, 4, seed, "encoder")?;
        let widths = config.backbone.widths();
        let (diff_encoder, dgm) = if config.dgm {
            let diff = Backbone::new(&config.backbone, GUIDED_LAYERS, seed, "diff_encoder")?;
            let dgm = (0..GUIDED_LAYERS)
                .map(|j| {
                    Dgm::new(
                        &init,
                        &format!("dgm.{j}"),
                        diff.out_channels(j + 1),
                        widths[j],
                        config.ca_reduction,
                        config.channel_gate,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            (Some(diff), dgm)
        } else {
            (None, Vec::new())
        };
        Ok(LdgNet {
            config: config.clone(),
            encoder,
            diff_encoder,
            dgm,
            decoder: Decoder::new(&init, "decoder", widths, config)?,
        })
    }

    pub fn encode(&self, pre: &Var<T>, post: &Var<T>) -> Result<EncoderOutput<T>> {
        let (ps, qs) = (pre.shape(), post.shape());
        if ps != qs {
            return Err(TensorError::shape("encode", &ps, &qs).into());
        }
        if ps.len() != 4 || ps[1] != 3 {
            return Err(TensorError::contract("encode", format!("expected [N,3,H,W] images, got {ps:?}")).into());
        }
        if ps[2] % INPUT_MULTIPLE != 0 || ps[3] % INPUT_MULTIPLE != 0 || ps[2] == 0 || ps[3] == 0 {
            return Err(TensorError::contract(
                "encode",
                format!("image sides must be positive multiples of {INPUT_MULTIPLE}, got {}x{}", ps[2], ps[3]),
            )
            .into());
        }
        let mut out = EncoderOutput {
            pre: Vec::with_capacity(4),
            post: Vec::with_capacity(4),
            diff: Vec::new(),
            attention: Vec::new(),
        };
        let (mut x_pre, mut x_post) = (pre.clone(), post.clone());
        let mut d = match &self.diff_encoder {
            Some(_) => Some(abs_diff(pre, post)?),
            None => None,
        };
        for j in 1..=self.encoder.num_layers() {
            let o_pre = self.encoder.forward_layer(j, &x_pre)?;
            let o_post = self.encoder.forward_layer(j, &x_post)?;
            match (&self.diff_encoder, d.as_mut()) {
                (Some(diff), Some(d)) if j <= GUIDED_LAYERS => {
                    *d = diff.forward_layer(j, d)?;
                    let (gate, maps) = self.dgm[j - 1].gate(d)?;
                    x_pre = dgm_fuse(&o_pre, &gate)?;
                    x_post = dgm_fuse(&o_post, &gate)?;
                    out.diff.push(d.clone());
                    out.attention.push(maps);
                }
                _ => {
                    x_pre = o_pre;
                    x_post = o_post;
                }
            }
            out.pre.push(x_pre.clone());
            out.post.push(x_post.clone());
        }
        Ok(out)
    }

    pub fn forward_full(&self, pre: &Var<T>, post: &Var<T>) -> Result<ModelOutput<T>> {
        let encoder = self.encode(pre, post)?;
        let (logits, levels) = self.decoder.forward(&encoder.pre, &encoder.post)?;
        Ok(ModelOutput {
            logits,
            encoder,
            levels,
        })
    }

    /// Change logits `[N, 2, H, W]`.
    pub fn forward(&self, pre: &Var<T>, post: &Var<T>) -> Result<Var<T>> {
        Ok(self.forward_full(pre, post)?.logits)
    }

    pub fn param_count(&self) -> usize {
        nn::param_count(self)
    }

    pub fn set_training(&self, on: bool) {
        nn::set_training(self, on);
    }

    /// Sets every guidance scale to `value`.
    pub fn set_alpha(&self, value: f64) -> Result<()> {
        for g in &self.dgm {
            g.sca.alpha.0.set_value(ldg_tensor::Tensor::full(&[1], T::lit(value)))?;
        }
        Ok(())
    }
}

impl<T: Element> Module<T> for LdgNet<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        visit_child(v, "encoder", &self.encoder);
        if let Some(d) = &self.diff_encoder {
            visit_child(v, "diff_encoder", d);
        }
        visit_child(v, "dgm", &self.dgm);
        visit_child(v, "decoder", &self.decoder);
    }
}
