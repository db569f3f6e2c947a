//! Run configuration: model fields plus optimizer and loop settings, read
//! from flat `key = value` text and overridable key by key.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use ldgnet::ModelConfig;

use crate::error::{io_err, Result, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Seeds the per-epoch shuffles.
    pub shuffle_seed: u64,
    /// Stop once validation F1 reaches this value; 0 disables.
    pub target_f1: f64,
    pub memory_budget_mb: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 30,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            shuffle_seed: 0,
            target_f1: 0.0,
            memory_budget_mb: 4096.0,
        }
    }
}

impl TrainSettings {
    pub const KEYS: [&'static str; 10] = [
        "epochs",
        "batch_size",
        "lr",
        "weight_decay",
        "beta1",
        "beta2",
        "adam_eps",
        "shuffle_seed",
        "target_f1",
        "memory_budget_mb",
    ];

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "shuffle_seed" => self.shuffle_seed = parse(key, value)?,
            "target_f1" => self.target_f1 = parse(key, value)?,
            "memory_budget_mb" => self.memory_budget_mb = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("shuffle_seed", self.shuffle_seed.to_string()),
            ("target_f1", self.target_f1.to_string()),
            ("memory_budget_mb", self.memory_budget_mb.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TrainError::Settings("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(TrainError::Settings("lr must be positive and weight_decay non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Settings("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: V::Err| TrainError::Settings(format!("{key}: cannot parse {value:?}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSettings,
}

impl RunConfig {
    /// Sets any model or training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.train.set(key, value)? {
            return Ok(());
        }
        self.model.set(key, value)?;
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. A `preset` line is
    /// applied before every other key wherever it appears.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Settings(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = RunConfig::default();
        if let Some((_, p)) = pairs.iter().find(|(k, _)| k == "preset") {
            cfg.model = ModelConfig::preset(p)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, or names a preset directly (`tiny`, `default`,
    /// `large`) when no such file exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            if let Some(name) = path.to_str() {
                if let Ok(model) = ModelConfig::preset(name) {
                    return Ok(RunConfig {
                        model,
                        train: TrainSettings::default(),
                    });
                }
            }
        }
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Applies `--key value` (or `--key=value`) pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let key = a
                .strip_prefix("--")
                .ok_or_else(|| TrainError::Settings(format!("expected --key, got {a:?}")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| TrainError::Settings(format!("--{key} needs a value")))?;
                    (key.to_string(), v.clone())
                }
            };
            let key = key.replace('-', "_");
            if key == "preset" {
                self.model = ModelConfig::preset(&value)?;
            } else {
                self.set(&key, &value)?;
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.to_pairs().into_iter().chain(self.train.to_pairs()) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_overrides() {
        let mut cfg = RunConfig::parse("preset = tiny\n# comment\nlr = 0.001 # inline\nepochs=5\n").unwrap();
        assert_eq!(cfg.model, {
            let mut m = ModelConfig::tiny();
            m.seed = 0;
            m
        });
        assert_eq!((cfg.train.lr, cfg.train.epochs), (1e-3, 5));
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        cfg.apply_overrides(&["--dadf".into(), "false".into(), "--batch-size=4".into()]).unwrap();
        assert!(!cfg.model.dadf);
        assert_eq!(cfg.train.batch_size, 4);
        assert!(cfg.apply_overrides(&["--nope".into(), "1".into()]).is_err());
        assert!(RunConfig::parse("lr 3").is_err());
    }
}
