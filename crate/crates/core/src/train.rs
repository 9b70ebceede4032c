//! Training loop, checkpoints, and the divergence sentinel.
//!
//! Determinism contract: the batch order is a pure function of
//! (train.seed, epoch); latent and dropout streams are keyed by
//! (train.seed, optimizer step, procedure index). Resuming from a
//! checkpoint therefore reproduces the continuation bit for bit, without
//! serializing any generator state.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::corpus::Procedure;
use crate::encoders::Modality;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::objectives::{batch_loss, AdamState, LossBreakdown, LossContext, OptimConfig};
use crate::rng::Prng;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub grammar: crate::corpus::Grammar,
    pub model: Model,
    pub optim: AdamState,
    pub step: u64,
    pub config: ExperimentConfig,
    /// Resolved beta anneal horizon (config value 0 means auto).
    pub beta_anneal_steps: u64,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub divergence_reason: Option<String>,
    /// (step, validation NLL per pair) at each validation pass.
    pub val_history: Vec<(u64, f64)>,
}

impl Checkpoint {
    pub fn fresh(grammar: crate::corpus::Grammar, model: Model, config: ExperimentConfig) -> Self {
        let optim = AdamState::new(&model.store);
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            grammar,
            model,
            optim,
            step: 0,
            config,
            beta_anneal_steps: 0,
            diverged: false,
            divergence_reason: None,
            val_history: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::data(format!(
                "checkpoint format {} unsupported (expected {})",
                ckpt.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Clone)]
pub struct TrainRequest<'a> {
    pub corpus: &'a [Procedure],
    pub modality: Modality,
    /// Noise identity of the corpus (video features are fixed per dataset).
    pub corpus_seed: u64,
    pub epochs: u64,
    /// Per-step loss log (line-delimited JSON); None disables logging.
    pub log_path: Option<PathBuf>,
    /// Where to persist the rolling last-good checkpoint; None disables.
    pub checkpoint_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps_run: u64,
    pub first_loss: LossBreakdown,
    pub last_loss: LossBreakdown,
    pub first_val_nll: f64,
    pub final_val_nll: f64,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub divergence_reason: Option<String>,
}

/// Deterministic train/validation split over corpus indices.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = Prng::derive(seed, &[0x511]);
    rng.shuffle(&mut indices);
    let val_n = ((n as f64) * val_fraction).floor() as usize;
    let val = indices[..val_n].to_vec();
    let train = indices[val_n..].to_vec();
    (train, val)
}

/// Asserts split hygiene: no unseen-split recipe type in a training corpus.
pub fn assert_split_hygiene(corpus: &[Procedure], unseen_types: &[String]) -> Result<()> {
    for proc in corpus {
        if unseen_types.iter().any(|t| t == &proc.recipe_type) {
            return Err(Error::data(format!(
                "training corpus contains unseen-split recipe type '{}'",
                proc.recipe_type
            )));
        }
    }
    Ok(())
}

/// Runs `req.epochs` additional epochs on the checkpoint, mutating it in
/// place. Validation runs at the end of every epoch; the divergence sentinel
/// inspects clamp saturation and validation progress at the end.
pub fn train(ckpt: &mut Checkpoint, req: &TrainRequest) -> Result<TrainSummary> {
    let config = ckpt.config.clone();
    assert_split_hygiene(req.corpus, &config.split.unseen_types)?;
    let (train_idx, val_idx) = split_indices(
        req.corpus.len(),
        config.train.val_fraction,
        config.train.seed,
    );
    if train_idx.is_empty() {
        return Err(Error::data("empty training split"));
    }
    let batch_size = config.train.batch_size;
    let steps_per_epoch = train_idx.len().div_ceil(batch_size) as u64;
    let warmup_steps = (config.optim.warmup_epochs * steps_per_epoch as f64).round() as u64;
    let total_steps_planned = ckpt.step + req.epochs * steps_per_epoch;
    if ckpt.beta_anneal_steps == 0 {
        ckpt.beta_anneal_steps = if config.loss.beta_anneal_steps > 0 {
            config.loss.beta_anneal_steps
        } else {
            (total_steps_planned / 2).max(1)
        };
    }
    let weights = config.loss_weights(ckpt.beta_anneal_steps);
    let toggles = config.toggles();
    let optim_config = OptimConfig {
        lr: config.optim.lr,
        weight_decay: config.optim.weight_decay,
        warmup_steps,
        ..Default::default()
    };

    let mut log = match &req.log_path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };

    let mut first_loss: Option<LossBreakdown> = None;
    let mut last_loss = LossBreakdown::default();
    let mut clamp_frac_acc = 0.0;
    let mut kl_acc = 0.0;
    let mut clamp_frac_batches = 0u64;
    let mut local_step = 0u64;
    let start_epoch = ckpt.step / steps_per_epoch;

    let first_val_nll = validation_nll(&ckpt.model, req, &config, &val_idx, &train_idx)?;
    if ckpt.val_history.is_empty() {
        ckpt.val_history.push((ckpt.step, first_val_nll));
    }

    for epoch in start_epoch..start_epoch + req.epochs {
        let mut order = train_idx.clone();
        let mut erng = Prng::derive(config.train.seed, &[0xe9, epoch]);
        erng.shuffle(&mut order);
        // Resume mid-run lands on an epoch boundary; batches within the
        // epoch replay in order.
        let start_batch = (ckpt.step % steps_per_epoch) as usize;
        for batch_indices in order.chunks(batch_size).skip(start_batch) {
            let batch: Vec<(usize, &Procedure)> = batch_indices
                .iter()
                .map(|&i| (i, &req.corpus[i]))
                .collect();
            let ctx = LossContext {
                modality: req.modality,
                corpus_seed: req.corpus_seed,
                weights: &weights,
                toggles: &toggles,
                step: ckpt.step,
                train_seed: config.train.seed,
                dropout_p: config.train.dropout,
            };
            let (breakdown, mut grads) = match batch_loss(&ckpt.model, &batch, &ctx) {
                Ok(r) => r,
                Err(e) => {
                    if let Some(p) = &req.checkpoint_path {
                        ckpt.save(p)?;
                    }
                    return Err(e);
                }
            };
            // Warmup counts steps within this run, so finetuning re-warms
            // over one epoch of its own dataset.
            let lr = crate::objectives::lr_at(local_step, &optim_config);
            ckpt.optim
                .apply_with_lr(&mut ckpt.model.store, &mut grads, &optim_config, lr);
            ckpt.step += 1;
            local_step += 1;
            if let Some(log) = log.as_mut() {
                serde_json::to_writer(&mut *log, &breakdown)?;
                log.write_all(b"\n")?;
            }
            clamp_frac_acc += breakdown.logvar_clamp_frac;
            kl_acc += breakdown.mean_kl_per_pair;
            clamp_frac_batches += 1;
            if first_loss.is_none() {
                first_loss = Some(breakdown.clone());
            }
            last_loss = breakdown;
        }
        let val_nll = validation_nll(&ckpt.model, req, &config, &val_idx, &train_idx)?;
        ckpt.val_history.push((ckpt.step, val_nll));
        if let Some(p) = &req.checkpoint_path {
            ckpt.save(p)?;
        }
    }

    // Divergence sentinel. Three signatures: the posterior's KL to the
    // prior blowing up (unconstrained mu when the KL weight vanishes),
    // posterior variances pinned at the clamp bound, or validation NLL that
    // never improves on its starting point.
    let mean_clamp_frac = if clamp_frac_batches > 0 {
        clamp_frac_acc / clamp_frac_batches as f64
    } else {
        0.0
    };
    let mean_kl = if clamp_frac_batches > 0 {
        kl_acc / clamp_frac_batches as f64
    } else {
        0.0
    };
    let kl_bound = config.model.dims.d_z as f64;
    let best_val = ckpt
        .val_history
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let initial_val = ckpt.val_history.first().map(|&(_, v)| v).unwrap_or(0.0);
    if mean_kl > kl_bound {
        ckpt.diverged = true;
        ckpt.divergence_reason = Some(format!(
            "posterior KL diverged from the prior ({mean_kl:.1} nats per pair, bound {kl_bound})"
        ));
    } else if mean_clamp_frac > 0.05 {
        ckpt.diverged = true;
        ckpt.divergence_reason = Some(format!(
            "posterior logvar pinned at the clamp bound ({:.1}% of entries on average)",
            100.0 * mean_clamp_frac
        ));
    } else if ckpt.val_history.len() >= 3 && best_val >= initial_val {
        ckpt.diverged = true;
        ckpt.divergence_reason =
            Some(format!("validation NLL never improved ({initial_val:.4} -> best {best_val:.4})"));
    }
    if let Some(p) = &req.checkpoint_path {
        ckpt.save(p)?;
    }
    if let Some(mut log) = log {
        log.flush()?;
    }

    Ok(TrainSummary {
        steps_run: ckpt.step,
        first_loss: first_loss.unwrap_or_default(),
        last_loss,
        first_val_nll,
        final_val_nll: ckpt.val_history.last().map(|&(_, v)| v).unwrap_or(0.0),
        diverged: ckpt.diverged,
        divergence_reason: ckpt.divergence_reason.clone(),
    })
}

/// Teacher-forced NLL per pair on the validation split (falls back to a
/// slice of the training split when validation is empty), dropout off,
/// posterior latents with a fixed seed.
fn validation_nll(
    model: &Model,
    req: &TrainRequest,
    config: &ExperimentConfig,
    val_idx: &[usize],
    train_idx: &[usize],
) -> Result<f64> {
    let indices: Vec<usize> = if val_idx.is_empty() {
        train_idx.iter().copied().take(32).collect()
    } else {
        val_idx.to_vec()
    };
    let weights = config.loss_weights(1);
    let toggles = crate::objectives::LossToggles {
        l_pred: true,
        l_aux: false,
        l_rec: true,
    };
    let ctx = LossContext {
        modality: req.modality,
        corpus_seed: req.corpus_seed,
        weights: &weights,
        toggles: &toggles,
        step: u64::MAX, // beta fully annealed; KL is reported, not trained
        train_seed: config.train.seed ^ 0x7a1,
        dropout_p: 0.0,
    };
    let batch: Vec<(usize, &Procedure)> =
        indices.iter().map(|&i| (i, &req.corpus[i])).collect();
    let (breakdown, _) = batch_loss(model, &batch, &ctx)?;
    Ok((breakdown.l_pred + breakdown.l_rec) * batch.len() as f64
        / breakdown.pairs.max(1) as f64)
}
