//! MobileNetV3-style feature extractor split into four stages.

use ldg_tensor::nn::{global_avg_pool, init::join, visit_child, Conv2d, Conv2dSpec, Module, Visitor};
use ldg_tensor::{Element, TensorError, UnaryKind, Var};

use crate::blocks::{ConvBn, Init};
use crate::config::{round_channels, BackboneConfig};
use crate::error::{ModelError, Result};

/// Squeeze-and-excite gate with a hard-sigmoid output.
pub struct SqueezeExcite<T: Element> {
    pub reduce: Conv2d<T>,
    pub expand: Conv2d<T>,
}

impl<T: Element> SqueezeExcite<T> {
    fn new(init: &Init, path: &str, ch: usize) -> Result<Self> {
        let hidden = round_channels(ch as f64 / 4.0);
        Ok(SqueezeExcite {
            reduce: init.conv(&join(path, "reduce"), Conv2dSpec::new(ch, hidden, 1))?,
            expand: init.conv(&join(path, "expand"), Conv2dSpec::new(hidden, ch, 1))?,
        })
    }

    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let s = self.reduce.forward(&global_avg_pool(x)?)?.relu();
        let gate = self.expand.forward(&s)?.hardsigmoid();
        Ok(x.mul(&gate)?)
    }
}

impl<T: Element> Module<T> for SqueezeExcite<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        visit_child(v, "reduce", &self.reduce);
        visit_child(v, "expand", &self.expand);
    }
}

/// Expand (1x1), depthwise 3x3, optional squeeze-excite, project (1x1),
/// residual when shapes allow.
pub struct InvertedResidual<T: Element> {
    pub expand: Option<ConvBn<T>>,
    pub depthwise: ConvBn<T>,
    pub se: Option<SqueezeExcite<T>>,
    pub project: ConvBn<T>,
    pub residual: bool,
}

impl<T: Element> InvertedResidual<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &Init,
        path: &str,
        in_ch: usize,
        out_ch: usize,
        expand_ratio: usize,
        stride: usize,
        act: UnaryKind,
        se: bool,
    ) -> Result<Self> {
        let hidden = if expand_ratio == 1 { in_ch } else { round_channels((in_ch * expand_ratio) as f64) };
        let expand = (expand_ratio != 1)
            .then(|| ConvBn::new(init, &join(path, "expand"), Conv2dSpec::new(in_ch, hidden, 1), Some(act)))
            .transpose()?;
        let dw = Conv2dSpec::depthwise(hidden, 3, 1).stride(stride);
        Ok(InvertedResidual {
            expand,
            depthwise: ConvBn::new(init, &join(path, "depthwise"), dw, Some(act))?,
            se: se.then(|| SqueezeExcite::new(init, &join(path, "se"), hidden)).transpose()?,
            project: ConvBn::new(init, &join(path, "project"), Conv2dSpec::new(hidden, out_ch, 1), None)?,
            residual: stride == 1 && in_ch == out_ch,
        })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let mut h = match &self.expand {
            Some(e) => e.forward(x)?,
            None => x.clone(),
        };
        h = self.depthwise.forward(&h)?;
        if let Some(se) = &self.se {
            h = se.forward(&h)?;
        }
        h = self.project.forward(&h)?;
        if self.residual {
            h = h.add(x)?;
        }
        Ok(h)
    }
}

impl<T: Element> Module<T> for InvertedResidual<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        if let Some(e) = &self.expand {
            visit_child(v, "expand", e);
        }
        visit_child(v, "depthwise", &self.depthwise);
        if let Some(se) = &self.se {
            visit_child(v, "se", se);
        }
        visit_child(v, "project", &self.project);
    }
}

/// One hierarchical layer: the first one also owns the stem.
pub struct Stage<T: Element> {
    pub stem: Option<ConvBn<T>>,
    pub blocks: Vec<InvertedResidual<T>>,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl<T: Element> Module<T> for Stage<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        if let Some(s) = &self.stem {
            visit_child(v, "stem", s);
        }
        visit_child(v, "blocks", &self.blocks);
    }
}

pub struct Backbone<T: Element> {
    pub config: BackboneConfig,
    pub stages: Vec<Stage<T>>,
}

impl<T: Element> Backbone<T> {
    /// Builds the first `num_layers` (3 or 4) stages. Weights are drawn from
    /// streams keyed by `seed` and the module path under `path`.
    pub fn new(config: &BackboneConfig, num_layers: usize, seed: u64, path: &str) -> Result<Self> {
        if !(3..=4).contains(&num_layers) {
            return Err(ModelError::Contract(format!("backbone: num_layers must be 3 or 4, got {num_layers}")));
        }
        let init = Init { seed };
        let widths = config.widths();
        let stem_w = config.stem_width();
        let mut stages = Vec::with_capacity(num_layers);
        let mut in_ch = stem_w;
        for j in 0..num_layers {
            let sp = join(path, &format!("layer{}", j + 1));
            let stem = (j == 0)
                .then(|| {
                    let spec = Conv2dSpec::new(3, stem_w, 3).stride(2).padding(1);
                    ConvBn::new(&init, &join(&sp, "stem"), spec, Some(UnaryKind::HardSwish))
                })
                .transpose()?;
            let act = if j < 2 { UnaryKind::Relu } else { UnaryKind::HardSwish };
            let stage_in = if j == 0 { 3 } else { in_ch };
            let mut blocks = Vec::new();
            for b in 0..config.blocks_per_stage[j] {
                let (stride, cin) = if b == 0 { (2, in_ch) } else { (1, widths[j]) };
                let bp = join(&sp, &format!("blocks.{b}"));
                blocks.push(InvertedResidual::new(
                    &init,
                    &bp,
                    cin,
                    widths[j],
                    config.expand_ratios[j],
                    stride,
                    act,
                    config.use_se[j],
                )?);
            }
            stages.push(Stage {
                stem,
                blocks,
                in_ch: stage_in,
                out_ch: widths[j],
            });
            in_ch = widths[j];
        }
        Ok(Backbone {
            config: config.clone(),
            stages,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.stages.len()
    }

    pub fn out_channels(&self, j: usize) -> usize {
        self.stages[j - 1].out_ch
    }

    /// Runs layer `j` (1-based).
    pub fn forward_layer(&self, j: usize, x: &Var<T>) -> Result<Var<T>> {
        let stage = self
            .stages
            .get(j.wrapping_sub(1))
            .ok_or_else(|| ModelError::Contract(format!("backbone has no layer {j}")))?;
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != stage.in_ch {
            return Err(TensorError::shape("backbone layer input", &xs, &[0, stage.in_ch, 0, 0]).into());
        }
        let mut h = match &stage.stem {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        for b in &stage.blocks {
            h = b.forward(&h)?;
        }
        Ok(h)
    }

    /// All layers in sequence.
    pub fn forward(&self, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let mut levels = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for j in 1..=self.stages.len() {
            h = self.forward_layer(j, &h)?;
            levels.push(h.clone());
        }
        Ok(levels)
    }
}

impl<T: Element> Module<T> for Backbone<T> {
    fn visit(&self, v: &mut dyn Visitor<T>) {
        for (j, s) in self.stages.iter().enumerate() {
            visit_child(v, &format!("layer{}", j + 1), s);
        }
    }
}
