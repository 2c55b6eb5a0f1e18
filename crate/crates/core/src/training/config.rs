use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::SeedBundle;

/// Optimization settings, the `[train]` section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup: u64,
    /// Multiplier on the inverse square-root schedule.
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub label_smoothing: f64,
    /// Constant rate for fine-tuning; `0` selects `1e-4 · sqrt(512 / d_model)`.
    pub finetune_lr: f64,
    pub seeds: SeedBundle,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 16,
            batch_size: 32,
            warmup: 400,
            lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            label_smoothing: 0.1,
            finetune_lr: 0.0,
            seeds: SeedBundle::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.warmup == 0 {
            return Err(Error::config("train.warmup", "must be at least 1"));
        }
        if !(self.lr_scale > 0.0 && self.lr_scale.is_finite()) {
            return Err(Error::config("train.lr_scale", "must be positive"));
        }
        for (key, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, format!("{} is outside [0, 1)", b)));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("train.adam_eps", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("train.label_smoothing", "must lie in [0, 1)"));
        }
        if !(self.finetune_lr >= 0.0 && self.finetune_lr.is_finite()) {
            return Err(Error::config("train.finetune_lr", "must be non-negative"));
        }
        Ok(())
    }

    pub fn finetune_rate(&self, d_model: usize) -> f64 {
        if self.finetune_lr > 0.0 {
            self.finetune_lr
        } else {
            1e-4 * (512.0 / d_model as f64).sqrt()
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate(self.model.max_len)?;
        if self.data.vocab > self.model.src_vocab || self.data.vocab > self.model.tgt_vocab {
            return Err(Error::config(
                "data.vocab",
                format!(
                    "{} exceeds the model vocabularies ({}, {})",
                    self.data.vocab, self.model.src_vocab, self.model.tgt_vocab
                ),
            ));
        }
        Ok(())
    }

    /// Parses and validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<serialize>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Names the key a TOML error points at, falling back to the parser's own
/// message.
fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let message = e.message().to_string();
    if let Some(field) = message
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
    {
        return Error::config(field, message.clone());
    }
    let key = e
        .span()
        .and_then(|span| {
            let line_start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
            let line = text[line_start..].lines().next()?;
            let (key, _) = line.split_once('=')?;
            Some(key.trim().to_string())
        })
        .unwrap_or_else(|| "<toml>".to_string());
    Error::config(key, message)
}
