//! Run configuration file: TOML with `[gen]`, `[model]`, `[train]` and
//! `[eval]` tables, every key optional.
//!
//! Model vocabularies that are not set explicitly are derived from `[gen]`,
//! so a generated dataset and the default model always agree.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GenConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Trailing fraction of the dataset held out from training.
    pub holdout_frac: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { holdout_frac: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let model_keys = table.get("model").and_then(|m| m.as_table());
        let set = |k: &str| model_keys.is_some_and(|t| t.contains_key(k));
        let (u, i, c) = cfg.gen.vocab();
        if !set("user_vocab") {
            cfg.model.user_vocab = u;
        }
        if !set("item_vocab") {
            cfg.model.item_vocab = i;
        }
        if !set("cross_vocab") {
            cfg.model.cross_vocab = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.eval.holdout_frac) {
            return Err(Error::Config(format!(
                "eval: holdout_frac must be in [0, 1), got {}",
                self.eval.holdout_frac
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_agree() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let (u, i, c) = cfg.gen.vocab();
        assert_eq!((u, i, c), (cfg.model.user_vocab, cfg.model.item_vocab, cfg.model.cross_vocab));
    }

    #[test]
    fn vocab_follows_gen_unless_set() {
        let cfg = RunConfig::from_toml("[gen]\nnum_items = 50\n").unwrap();
        assert_eq!(cfg.model.item_vocab[0], 51);
        let cfg = RunConfig::from_toml("[gen]\nnum_items = 50\n[model]\nitem_vocab = [100, 17, 65]\n").unwrap();
        assert_eq!(cfg.model.item_vocab[0], 100);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let err = RunConfig::from_toml("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("learning_rate")), "{err}");
    }

    #[test]
    fn roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.train.lr = 0.01;
        cfg.model.use_ram = false;
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
