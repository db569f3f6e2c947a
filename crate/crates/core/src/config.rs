//! Architecture hyperparameters and their flat `key=value` form.

use std::fmt::Display;
use std::str::FromStr;

use ldg_tensor::DType;

use crate::error::{ModelError, Result};

/// Final activation of the channel-attention MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelGate {
    Silu,
    Sigmoid,
}

impl FromStr for ChannelGate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "silu" => Ok(ChannelGate::Silu),
            "sigmoid" => Ok(ChannelGate::Sigmoid),
            _ => Err(format!("expected silu or sigmoid, got {s:?}")),
        }
    }
}

impl Display for ChannelGate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChannelGate::Silu => "silu",
            ChannelGate::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
    pub expand_ratios: [usize; 4],
    pub width_multiplier: f64,
    pub use_se: [bool; 4],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stem_channels: 16,
            stage_channels: [16, 24, 48, 96],
            blocks_per_stage: [2, 2, 3, 2],
            expand_ratios: [2, 4, 4, 6],
            width_multiplier: 1.0,
            use_se: [false; 4],
        }
    }
}

/// Rounds to the nearest multiple of 8 (ties up), never below 8.
pub fn round_channels(c: f64) -> usize {
    let k = (c / 8.0 + 0.5).floor() as usize;
    (k * 8).max(8)
}

impl BackboneConfig {
    pub fn stage_width(&self, j: usize) -> usize {
        round_channels(self.stage_channels[j] as f64 * self.width_multiplier)
    }

    pub fn widths(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|j| self.stage_width(j))
    }

    pub fn stem_width(&self) -> usize {
        round_channels(self.stem_channels as f64 * self.width_multiplier)
    }

    /// Cumulative output stride after each stage: the stem and every stage
    /// halve the resolution once.
    pub fn stage_strides(&self) -> [usize; 4] {
        [4, 8, 16, 32]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub dgm: bool,
    pub dadf: bool,
    pub state_dim: usize,
    pub ssm_expand: usize,
    /// Rank of the step-size projection; 0 picks `ceil(inner / 16)`.
    pub dt_rank: usize,
    pub shared_direction_proj: bool,
    pub c_dec: usize,
    pub channel_gate: ChannelGate,
    pub ca_reduction: usize,
    pub seed: u64,
    pub dtype: DType,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            dgm: true,
            dadf: true,
            state_dim: 8,
            ssm_expand: 2,
            dt_rank: 0,
            shared_direction_proj: false,
            c_dec: 64,
            channel_gate: ChannelGate::Silu,
            ca_reduction: 4,
            seed: 0,
            dtype: DType::F32,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: V::Err| ModelError::config(key, format!("cannot parse {value:?}: {e}")))
}

fn parse4<V: FromStr + Copy + Default>(key: &str, value: &str) -> Result<[V; 4]>
where
    V::Err: Display,
{
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 4 {
        return Err(ModelError::config(key, format!("expected 4 comma-separated values, got {value:?}")));
    }
    let mut out = [V::default(); 4];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = parse(key, p)?;
    }
    Ok(out)
}

fn join4<V: Display>(v: &[V; 4]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    /// Width 0.5, state dimension 8, 32 decoder channels.
    pub fn tiny() -> Self {
        ModelConfig {
            backbone: BackboneConfig {
                width_multiplier: 0.5,
                ..BackboneConfig::default()
            },
            c_dec: 32,
            ..ModelConfig::default()
        }
    }

    /// A wider configuration for 256x256 inputs: about 3M parameters and
    /// 1.8 GFLOPs per pair.
    pub fn large() -> Self {
        ModelConfig {
            backbone: BackboneConfig {
                stem_channels: 16,
                stage_channels: [24, 40, 96, 160],
                blocks_per_stage: [2, 3, 3, 3],
                expand_ratios: [3, 4, 4, 6],
                width_multiplier: 1.0,
                use_se: [false, false, true, true],
            },
            state_dim: 16,
            c_dec: 64,
            ..ModelConfig::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(ModelConfig::default()),
            "tiny" => Ok(ModelConfig::tiny()),
            "large" => Ok(ModelConfig::large()),
            _ => Err(ModelError::config("preset", format!("unknown preset {name:?} (default, tiny, large)"))),
        }
    }

    pub fn dt_rank_for(&self, inner: usize) -> usize {
        if self.dt_rank == 0 {
            inner.div_ceil(16)
        } else {
            self.dt_rank
        }
    }

    /// All keys accepted by [`ModelConfig::set`], in canonical order.
    pub const KEYS: [&'static str; 18] = [
        "stem_channels",
        "stage_channels",
        "blocks_per_stage",
        "expand_ratios",
        "width_multiplier",
        "use_se",
        "dgm",
        "dadf",
        "state_dim",
        "ssm_expand",
        "dt_rank",
        "shared_direction_proj",
        "c_dec",
        "channel_gate",
        "ca_reduction",
        "seed",
        "dtype",
        "preset",
    ];

    /// Sets one field from its text form. `preset` replaces every field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let b = &mut self.backbone;
        match key {
            "preset" => *self = ModelConfig::preset(value.trim())?,
            "stem_channels" => b.stem_channels = parse(key, value)?,
            "stage_channels" => b.stage_channels = parse4(key, value)?,
            "blocks_per_stage" => b.blocks_per_stage = parse4(key, value)?,
            "expand_ratios" => b.expand_ratios = parse4(key, value)?,
            "width_multiplier" => b.width_multiplier = parse(key, value)?,
            "use_se" => b.use_se = parse4(key, value)?,
            "dgm" => self.dgm = parse(key, value)?,
            "dadf" => self.dadf = parse(key, value)?,
            "state_dim" => self.state_dim = parse(key, value)?,
            "ssm_expand" => self.ssm_expand = parse(key, value)?,
            "dt_rank" => self.dt_rank = parse(key, value)?,
            "shared_direction_proj" => self.shared_direction_proj = parse(key, value)?,
            "c_dec" => self.c_dec = parse(key, value)?,
            "channel_gate" => self.channel_gate = parse(key, value)?,
            "ca_reduction" => self.ca_reduction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "dtype" => {
                self.dtype = DType::parse(value.trim())
                    .ok_or_else(|| ModelError::config(key, format!("expected f32 or f64, got {value:?}")))?
            }
            _ => return Err(ModelError::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Every field as `(key, value)`; feeding these back through
    /// [`ModelConfig::set`] reproduces the config.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let b = &self.backbone;
        vec![
            ("stem_channels", b.stem_channels.to_string()),
            ("stage_channels", join4(&b.stage_channels)),
            ("blocks_per_stage", join4(&b.blocks_per_stage)),
            ("expand_ratios", join4(&b.expand_ratios)),
            ("width_multiplier", b.width_multiplier.to_string()),
            ("use_se", join4(&b.use_se)),
            ("dgm", self.dgm.to_string()),
            ("dadf", self.dadf.to_string()),
            ("state_dim", self.state_dim.to_string()),
            ("ssm_expand", self.ssm_expand.to_string()),
            ("dt_rank", self.dt_rank.to_string()),
            ("shared_direction_proj", self.shared_direction_proj.to_string()),
            ("c_dec", self.c_dec.to_string()),
            ("channel_gate", self.channel_gate.to_string()),
            ("ca_reduction", self.ca_reduction.to_string()),
            ("seed", self.seed.to_string()),
            ("dtype", self.dtype.to_string()),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        if !(b.width_multiplier > 0.0 && b.width_multiplier.is_finite()) {
            return Err(ModelError::config("width_multiplier", "must be positive"));
        }
        if b.blocks_per_stage.contains(&0) {
            return Err(ModelError::config("blocks_per_stage", "every stage needs at least one block"));
        }
        if b.expand_ratios.contains(&0) || b.stem_channels == 0 || b.stage_channels.contains(&0) {
            return Err(ModelError::config("stage_channels", "channel counts and expand ratios must be positive"));
        }
        for (key, v) in [
            ("state_dim", self.state_dim),
            ("ssm_expand", self.ssm_expand),
            ("c_dec", self.c_dec),
            ("ca_reduction", self.ca_reduction),
        ] {
            if v == 0 {
                return Err(ModelError::config(key, "must be positive"));
            }
        }
        Ok(())
    }
}
