use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use toml::{Table, Value};

use super::optim::{AdamHyper, Schedule};
use super::scaled_lr;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Linear-probe settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Sampling stride of probe clips.
    pub stride: usize,
    /// Clips per split of the synthetic probe corpus built when no corpus
    /// is given.
    pub train_clips: usize,
    pub val_clips: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { steps: 300, lr: 1e-2, weight_decay: 1e-4, seed: 0, stride: 1, train_clips: 200, val_clips: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub base_lr: f64,
    pub batch_size: usize,
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    /// Clips per epoch when training on generated data.
    pub epoch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Corpus root; `None` generates moving-shapes clips on the fly.
    pub data: Option<PathBuf>,
    /// Temporal sampling stride.
    pub stride: usize,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    pub keep_checkpoints: usize,
    /// Continue from the newest checkpoint in `out_dir` if there is one.
    pub resume: bool,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::vit_b(),
            base_lr: 1.5e-4,
            batch_size: 8,
            total_epochs: 10,
            warmup_epochs: 1,
            epoch_size: 400,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            seed: 0,
            data: None,
            stride: 4,
            out_dir: PathBuf::from("runs/pretrain"),
            checkpoint_every: 100,
            keep_checkpoints: 2,
            resume: false,
            probe: ProbeConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

/// TOML scalar as the text [`TrainConfig::set`] expects.
pub(crate) fn value_text(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        other => Err(Error::Config(format!("{key}: expected a scalar, got {other}"))),
    }
}

impl TrainConfig {
    /// Acceptance-scale run: the toy model, batch 8, 500 steps. Stride 2
    /// doubles the per-clip displacement, and the probe corpus is large
    /// enough for a 64-wide linear readout not to overfit.
    pub fn toy() -> Self {
        let probe = ProbeConfig { stride: 2, train_clips: 2000, val_clips: 400, ..Default::default() };
        TrainConfig { model: ModelConfig::toy(), base_lr: 0.2, stride: 2, probe, ..Default::default() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            other => Ok(TrainConfig { model: ModelConfig::preset(other)?, ..Default::default() }),
        }
    }

    /// Sets one field. Keys use underscores or dashes; model fields are
    /// accepted directly (`dim`, `mask_ratio`, ...). `decoder_depths =
    /// "a,m"` sets both decoder depths at once.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let k = key.replace('-', "_");
        match k.as_str() {
            "preset" => *self = Self::preset(v)?,
            "base_lr" => self.base_lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "total_epochs" => self.total_epochs = parse(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, v)?,
            "epoch_size" => self.epoch_size = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "stride" => self.stride = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "keep_checkpoints" => self.keep_checkpoints = parse(key, v)?,
            "resume" => self.resume = parse(key, v)?,
            "probe_steps" => self.probe.steps = parse(key, v)?,
            "probe_lr" => self.probe.lr = parse(key, v)?,
            "probe_weight_decay" => self.probe.weight_decay = parse(key, v)?,
            "probe_seed" => self.probe.seed = parse(key, v)?,
            "probe_stride" => self.probe.stride = parse(key, v)?,
            "probe_train_clips" => self.probe.train_clips = parse(key, v)?,
            "probe_val_clips" => self.probe.val_clips = parse(key, v)?,
            "decoder_depths" => {
                let parts: Vec<&str> = v.split(',').collect();
                let [a, m] = parts.as_slice() else {
                    return Err(Error::Config(format!("decoder_depths wants \"appearance,motion\", got {v:?}")));
                };
                self.model.appearance_depth = parse(key, a)?;
                self.model.motion_depth = parse(key, m)?;
            }
            _ => {
                if !self.model.set(&k, v)? {
                    return Err(Error::Config(format!("unknown config key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Applies a flat TOML table; `preset` first and `heads` last so they
    /// do not clobber explicit settings.
    pub fn apply_table(&mut self, table: &Table) -> Result<()> {
        if let Some(p) = table.get("preset") {
            self.set("preset", &value_text("preset", p)?)?;
        }
        for (k, v) in table {
            if k == "preset" || k == "heads" {
                continue;
            }
            if v.is_table() {
                return Err(Error::Config(format!("config must be flat, {k:?} is a table")));
            }
            self.set(k, &value_text(k, v)?)?;
        }
        if let Some(h) = table.get("heads") {
            self.set("heads", &value_text("heads", h)?)?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_table(&table)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.warmup_epochs >= self.total_epochs {
            return bad("warmup_epochs must be smaller than total_epochs");
        }
        if self.stride == 0 || self.probe.stride == 0 {
            return bad("strides must be positive");
        }
        if self.epoch_size == 0 && self.data.is_none() {
            return bad("epoch_size must be positive for generated data");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }

    /// Schedule for a dataset yielding `steps_per_epoch` batches.
    pub fn schedule(&self, steps_per_epoch: usize) -> Schedule {
        Schedule {
            peak: scaled_lr(self.base_lr, self.batch_size),
            warmup_steps: self.warmup_epochs * steps_per_epoch,
            total_steps: self.total_epochs * steps_per_epoch,
        }
    }

    /// Every field as `(key, value)` text.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("base_lr".into(), self.base_lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("total_epochs".into(), self.total_epochs.to_string()),
            ("warmup_epochs".into(), self.warmup_epochs.to_string()),
            ("epoch_size".into(), self.epoch_size.to_string()),
            ("beta1".into(), self.beta1.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("eps".into(), self.eps.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("data".into(), self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("stride".into(), self.stride.to_string()),
            ("out_dir".into(), self.out_dir.display().to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
            ("keep_checkpoints".into(), self.keep_checkpoints.to_string()),
            ("resume".into(), self.resume.to_string()),
            ("probe_steps".into(), self.probe.steps.to_string()),
            ("probe_lr".into(), self.probe.lr.to_string()),
            ("probe_weight_decay".into(), self.probe.weight_decay.to_string()),
            ("probe_seed".into(), self.probe.seed.to_string()),
            ("probe_stride".into(), self.probe.stride.to_string()),
            ("probe_train_clips".into(), self.probe.train_clips.to_string()),
            ("probe_val_clips".into(), self.probe.val_clips.to_string()),
        ];
        out.extend(self.model.pairs().into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::toy();
        c.set("mask-ratio", "0.9").unwrap();
        c.set("decoder_depths", "4,2").unwrap();
        c.set("data", "/tmp/x").unwrap();
        let text: String = c.pairs().iter().map(|(k, v)| format!("{k} = {v:?}\n")).collect();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn preset_then_overrides() {
        let c = TrainConfig::from_toml_str("preset = \"toy\"\nbase_lr = 0.5\nheads = 4\ndim = 32\n").unwrap();
        assert_eq!((c.model.dim, c.model.heads, c.base_lr), (32, 4, 0.5));
        assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
        assert!(TrainConfig::from_toml_str("[x]\na = 1").is_err());
    }

    #[test]
    fn invariants() {
        let mut c = TrainConfig::toy();
        c.validate().unwrap();
        c.warmup_epochs = c.total_epochs;
        assert!(c.validate().is_err());
        let s = TrainConfig { batch_size: 256, ..TrainConfig::default() }.schedule(10);
        assert_eq!(s.peak, 1.5e-4);
    }
}
