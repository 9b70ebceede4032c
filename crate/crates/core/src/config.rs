//! Experiment configuration.
//!
//! One JSON document per run; every knob the experiments exercise is a key
//! here, and the whole document is snapshotted into checkpoints so a run can
//! be reproduced from its artifacts alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Averaging;
use crate::model::{ModelDims, ModelKind};
use crate::objectives::{LossToggles, LossWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub seed: u64,
    pub video_noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta_max: f64,
    /// 0 means "auto": half of the run's total optimizer steps, resolved at
    /// training start and recorded in the checkpoint.
    pub beta_anneal_steps: u64,
    pub gamma: f64,
    pub toggles: LossTogglesConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTogglesConfig {
    pub l_pred: bool,
    pub l_aux: bool,
    pub l_rec: bool,
}

impl From<&LossTogglesConfig> for LossToggles {
    fn from(c: &LossTogglesConfig) -> Self {
        LossToggles {
            l_pred: c.l_pred,
            l_aux: c.l_aux,
            l_rec: c.l_rec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimSection {
    pub lr: f64,
    pub weight_decay: f64,
    /// Warmup measured in epochs of whichever dataset is being trained.
    pub warmup_epochs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    /// Fraction of training procedures held out for validation.
    pub val_fraction: f64,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSection {
    pub nucleus_p: f64,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSection {
    pub averaging: Averaging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSection {
    /// Recipe types reserved for the unseen evaluation split; they must
    /// never occur in a training corpus.
    pub unseen_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// "desk" or "paper"; informational once dims are resolved.
    pub preset: String,
    /// Grammar file; absent means the built-in desk grammar.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grammar: Option<PathBuf>,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub metrics: MetricsSection,
    pub eval: EvalSection,
    pub split: SplitSection,
}

impl ExperimentConfig {
    /// Desk-scale defaults: CPU-trainable in minutes.
    pub fn desk() -> Self {
        let dims = ModelDims::desk();
        ExperimentConfig {
            preset: "desk".to_string(),
            grammar: None,
            encoder: EncoderConfig {
                seed: 40051,
                video_noise_sigma: 0.1,
            },
            model: ModelConfig {
                kind: ModelKind::Cvae,
                dims,
                init_seed: 7,
            },
            loss: LossConfig {
                alpha: 3.0,
                beta_max: 0.2,
                beta_anneal_steps: 0, // auto: half the run
                gamma: 1.0,
                toggles: LossTogglesConfig {
                    l_pred: true,
                    l_aux: true,
                    l_rec: true,
                },
            },
            optim: OptimSection {
                lr: 1e-3,
                weight_decay: 0.01,
                warmup_epochs: 1.0,
            },
            train: TrainSection {
                batch_size: 16,
                epochs: 8,
                seed: 1234,
                val_fraction: 0.1,
                dropout: 0.1,
            },
            decode: DecodeSection {
                nucleus_p: 0.9,
                max_len: dims.decode_cap(),
            },
            metrics: MetricsSection {
                averaging: Averaging::Both,
            },
            eval: EvalSection { k: 5, seed: 2024 },
            split: SplitSection {
                unseen_types: crate::corpus::desk_unseen_types(),
            },
        }
    }

    /// Published-scale hyperparameters; never run at desk scale, provided so
    /// the configuration is complete.
    pub fn paper() -> Self {
        let dims = ModelDims::paper();
        let mut c = Self::desk();
        c.preset = "paper".to_string();
        c.model.dims = dims;
        c.loss.alpha = 3.0;
        c.loss.beta_max = 0.2;
        c.loss.beta_anneal_steps = 100_000;
        c.optim.lr = 1e-4;
        c.optim.warmup_epochs = 1.0;
        c.train.batch_size = 50;
        c.decode.max_len = dims.decode_cap();
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.model.dims;
        if !d.d_f.is_multiple_of(d.ctx_heads) {
            return Err(Error::data(format!(
                "d_f {} not divisible by ctx_heads {}",
                d.d_f, d.ctx_heads
            )));
        }
        if self.train.batch_size == 0 {
            return Err(Error::data("batch_size must be positive"));
        }
        if !(self.decode.nucleus_p > 0.0 && self.decode.nucleus_p <= 1.0) {
            return Err(Error::data("decode.nucleus_p must be in (0, 1]"));
        }
        if self.eval.k == 0 {
            return Err(Error::data("eval.k must be at least 1"));
        }
        if !(0.0..0.9).contains(&self.train.val_fraction) {
            return Err(Error::data("train.val_fraction must be in [0, 0.9)"));
        }
        for w in [self.loss.alpha, self.loss.beta_max, self.loss.gamma] {
            if w < 0.0 {
                return Err(Error::data("loss weights must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn loss_weights(&self, resolved_anneal_steps: u64) -> LossWeights {
        LossWeights {
            alpha: self.loss.alpha,
            beta_max: self.loss.beta_max,
            beta_anneal_steps: resolved_anneal_steps,
            gamma: self.loss.gamma,
        }
    }

    pub fn toggles(&self) -> LossToggles {
        (&self.loss.toggles).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_paper_presets_validate_and_round_trip() {
        for config in [ExperimentConfig::desk(), ExperimentConfig::paper()] {
            config.validate().unwrap();
            let path = std::env::temp_dir().join(format!(
                "stepcast-config-{}-{}.json",
                std::process::id(),
                config.preset
            ));
            config.save(&path).unwrap();
            let back = ExperimentConfig::load(&path).unwrap();
            std::fs::remove_file(&path).ok();
            assert_eq!(config, back);
        }
    }

    #[test]
    fn paper_preset_carries_published_hyperparameters() {
        let c = ExperimentConfig::paper();
        assert_eq!(c.optim.lr, 1e-4);
        assert_eq!(c.optim.weight_decay, 0.01);
        assert_eq!(c.train.batch_size, 50);
        assert_eq!(c.loss.beta_anneal_steps, 100_000);
        assert_eq!(c.loss.beta_max, 0.2);
        assert_eq!(c.loss.gamma, 1.0);
        assert_eq!(c.model.dims.d_f, 512);
        assert_eq!(c.model.dims.d_z, 1024);
        assert_eq!(c.model.dims.ctx_layers, 6);
        assert_eq!(c.model.dims.ctx_heads, 8);
        assert_eq!(c.model.dims.dec_hidden, 512);
        assert_eq!(c.model.dims.dec_embed, 256);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::desk();
        c.model.dims.ctx_heads = 5; // 32 % 5 != 0
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.decode.nucleus_p = 0.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.eval.k = 0;
        assert!(c.validate().is_err());
    }
}
