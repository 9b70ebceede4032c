//! Training objectives and the optimizer.
//!
//! Per procedure, summing over every (context, next-step) pair t:
//!
//! * prediction loss: teacher-forced NLL of the next sentence decoded from
//!   the predicted embedding f'_{t+1};
//! * KL between the posterior and the standard-normal prior, weighted by a
//!   linearly annealed beta;
//! * auxiliary MSE pulling f'_{t+1} toward the frozen-encoder target
//!   f_{t+1}, gradient through the prediction only;
//! * reconstruction loss: NLL of the same sentence decoded from f_{t+1},
//!   which keeps the decoder learnable while f' is still poor.
//!
//! The batch reduction is the mean over procedures of the per-procedure
//! sums. The baseline drops the latent terms and trains its deterministic
//! head with the same auxiliary and decoder losses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::DropoutMode;
use crate::corpus::Procedure;
use crate::cvae::{sample_latent, LOGVAR_CLAMP};
use crate::encoders::Modality;
use crate::error::{Error, Result};
use crate::model::{AnticipationHead, Model};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta_max: f64,
    pub beta_anneal_steps: u64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 3.0,
            beta_max: 0.2,
            beta_anneal_steps: 100_000,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub l_pred: bool,
    pub l_aux: bool,
    pub l_rec: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles {
            l_pred: true,
            l_aux: true,
            l_rec: true,
        }
    }
}

/// Linear ramp: min(step / anneal_steps, 1) * beta_max.
pub fn beta_at(step: u64, weights: &LossWeights) -> f64 {
    if weights.beta_anneal_steps == 0 {
        return weights.beta_max;
    }
    (step as f64 / weights.beta_anneal_steps as f64).min(1.0) * weights.beta_max
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub l_pred: f64,
    pub l_kl: f64,
    pub l_aux: f64,
    pub l_rec: f64,
    pub beta_current: f64,
    pub total: f64,
    /// Pairs contributing to the batch (sum of T over procedures).
    pub pairs: usize,
    /// Procedures skipped for having fewer than 2 steps.
    pub skipped: usize,
    /// Mean closed-form KL per pair; the posterior-collapse indicator.
    pub mean_kl_per_pair: f64,
    /// Fraction of posterior logvar entries pinned at the clamp bound; the
    /// divergence indicator.
    pub logvar_clamp_frac: f64,
}

/// Everything a loss evaluation needs besides the model and the batch.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'w> {
    pub modality: Modality,
    /// Identity of the dataset's noise stream (video features).
    pub corpus_seed: u64,
    pub weights: &'w LossWeights,
    pub toggles: &'w LossToggles,
    /// Optimizer step, for beta annealing and the eps/dropout streams.
    pub step: u64,
    pub train_seed: u64,
    pub dropout_p: f64,
}

/// Per-parameter gradients aligned with the model's store.
#[derive(Debug, Clone)]
pub struct ParamGrads(pub Vec<Option<Tensor>>);

impl ParamGrads {
    pub fn entry(&self, pid: usize, idx: usize) -> f64 {
        self.0[pid].as_ref().map(|t| t.data[idx]).unwrap_or(0.0)
    }

    fn zeros(n: usize) -> Self {
        ParamGrads((0..n).map(|_| None).collect())
    }

    fn accumulate(&mut self, other: Vec<Option<Tensor>>) {
        for (slot, g) in self.0.iter_mut().zip(other) {
            match (slot.as_mut(), g) {
                (Some(acc), Some(t)) => acc.add_assign(&t),
                (None, Some(t)) => *slot = Some(t),
                _ => {}
            }
        }
    }

    fn scale(&mut self, c: f64) {
        for slot in self.0.iter_mut().flatten() {
            for v in &mut slot.data {
                *v *= c;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|t| t.data.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

struct ProcedureLoss {
    l_pred: f64,
    l_kl: f64,
    l_aux: f64,
    l_rec: f64,
    total: f64,
    pairs: usize,
    logvar_entries: usize,
    logvar_clamped: usize,
    grads: Vec<Option<Tensor>>,
}

fn procedure_loss(
    model: &Model,
    proc: &Procedure,
    proc_index: usize,
    ctx: &LossContext,
    frozen_aux_target: Option<&Tensor>,
) -> Result<ProcedureLoss> {
    let mut tape = Tape::new(&model.store);
    let dropout = if ctx.dropout_p > 0.0 {
        DropoutMode::Train {
            p: ctx.dropout_p,
            seed: crate::rng::Prng::derive(ctx.train_seed, &[ctx.step, proc_index as u64, 0xd0])
                .next_u64(),
        }
    } else {
        DropoutMode::Eval
    };
    let (f_seq, f_targets) =
        model.encode_procedure(&mut tape, proc, ctx.modality, ctx.corpus_seed, proc_index)?;
    let t_len = proc.steps.len();
    let r_all = model
        .context
        .forward(&mut tape, f_seq, &vec![false; t_len], dropout)?;

    let target_sentences: Vec<Vec<u32>> = proc.steps.iter().map(|s| s.tokens.clone()).collect();
    let beta = beta_at(ctx.step, ctx.weights);

    let mut l_pred_v = 0.0;
    let mut l_kl_v = 0.0;
    let mut l_aux_v = 0.0;
    let mut l_rec_v = 0.0;
    let mut logvar_entries = 0usize;
    let mut logvar_clamped = 0usize;
    let mut terms = Vec::new();

    let f_prime = match &model.head {
        AnticipationHead::Generative {
            posterior,
            prediction,
        } => {
            let (mu, logvar) = posterior.forward(&mut tape, f_targets, r_all);
            {
                let lv = tape.value(logvar);
                logvar_entries = lv.len();
                logvar_clamped = lv
                    .data
                    .iter()
                    .filter(|v| v.abs() >= LOGVAR_CLAMP - 1e-9)
                    .count();
            }
            let eps_seed = crate::rng::Prng::derive(
                ctx.train_seed,
                &[ctx.step, proc_index as u64, 0xe5],
            )
            .next_u64();
            let z = sample_latent(&mut tape, mu, logvar, eps_seed);
            let kl = tape.kl_std_normal(mu, logvar);
            l_kl_v = tape.value(kl).scalar_value();
            let weighted = tape.scale(kl, beta);
            terms.push(weighted);
            prediction.forward(&mut tape, z, r_all)
        }
        AnticipationHead::Deterministic(det) => det.forward(&mut tape, r_all),
    };

    if ctx.toggles.l_aux {
        // The target side is detached: the embeddings act as a target only.
        // Finite-difference checks pass a target frozen at the reference
        // parameters, since FD cannot express the stop-gradient itself.
        let target_values = match frozen_aux_target {
            Some(t) => t.clone(),
            None => tape.value(f_targets).clone(),
        };
        let aux = tape.mse_vs_const(f_prime, &target_values, 1.0 / model.dims.d_f as f64);
        l_aux_v = tape.value(aux).scalar_value();
        let weighted = tape.scale(aux, ctx.weights.alpha);
        terms.push(weighted);
    }
    if ctx.toggles.l_pred {
        let nll = model
            .decoder
            .teacher_forced_nll(&mut tape, f_prime, &target_sentences)?;
        l_pred_v = tape.value(nll).scalar_value();
        terms.push(nll);
    }
    if ctx.toggles.l_rec {
        let nll = model
            .decoder
            .teacher_forced_nll(&mut tape, f_targets, &target_sentences)?;
        l_rec_v = tape.value(nll).scalar_value();
        let weighted = tape.scale(nll, ctx.weights.gamma);
        terms.push(weighted);
    }

    let total = match terms.split_first() {
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t);
            }
            acc
        }
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let total_v = tape.value(total).scalar_value();
    if !total_v.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite loss on procedure {proc_index}: pred {l_pred_v} kl {l_kl_v} aux {l_aux_v} rec {l_rec_v}"
        )));
    }
    let grads = tape.backward(total).into_param_grads();
    Ok(ProcedureLoss {
        l_pred: l_pred_v,
        l_kl: l_kl_v,
        l_aux: l_aux_v,
        l_rec: l_rec_v,
        total: total_v,
        pairs: t_len,
        logvar_entries,
        logvar_clamped,
        grads,
    })
}

/// Loss and gradients for a batch of (corpus index, procedure) pairs:
/// procedures run in parallel, gradients reduce in corpus order, everything
/// is averaged over the contributing procedures.
pub fn batch_loss(
    model: &Model,
    batch: &[(usize, &Procedure)],
    ctx: &LossContext,
) -> Result<(LossBreakdown, ParamGrads)> {
    batch_loss_inner(model, batch, ctx, None)
}

fn batch_loss_inner(
    model: &Model,
    batch: &[(usize, &Procedure)],
    ctx: &LossContext,
    frozen_aux: Option<&[Option<Tensor>]>,
) -> Result<(LossBreakdown, ParamGrads)> {
    let mut usable = Vec::with_capacity(batch.len());
    let mut skipped = 0usize;
    for (pos, &(idx, proc)) in batch.iter().enumerate() {
        if proc.steps.len() < 2 {
            skipped += 1;
        } else {
            usable.push((pos, idx, proc));
        }
    }
    if usable.is_empty() {
        return Err(Error::data("batch has no usable procedures (all T < 2)"));
    }

    let results: Vec<Result<ProcedureLoss>> = usable
        .par_iter()
        .map(|&(pos, idx, proc)| {
            let frozen = frozen_aux.and_then(|f| f[pos].as_ref());
            procedure_loss(model, proc, idx, ctx, frozen)
        })
        .collect();

    let mut grads = ParamGrads::zeros(model.store.len());
    let mut breakdown = LossBreakdown {
        step: ctx.step,
        beta_current: beta_at(ctx.step, ctx.weights),
        skipped,
        ..Default::default()
    };
    let mut logvar_entries = 0usize;
    let mut logvar_clamped = 0usize;
    for result in results {
        let p = result?;
        breakdown.l_pred += p.l_pred;
        breakdown.l_kl += p.l_kl;
        breakdown.l_aux += p.l_aux;
        breakdown.l_rec += p.l_rec;
        breakdown.total += p.total;
        breakdown.pairs += p.pairs;
        logvar_entries += p.logvar_entries;
        logvar_clamped += p.logvar_clamped;
        grads.accumulate(p.grads);
    }
    let n = usable.len() as f64;
    breakdown.l_pred /= n;
    breakdown.l_kl /= n;
    breakdown.l_aux /= n;
    breakdown.l_rec /= n;
    breakdown.total /= n;
    grads.scale(1.0 / n);
    breakdown.mean_kl_per_pair = if breakdown.pairs > 0 {
        breakdown.l_kl * n / breakdown.pairs as f64
    } else {
        0.0
    };
    breakdown.logvar_clamp_frac = if logvar_entries > 0 {
        logvar_clamped as f64 / logvar_entries as f64
    } else {
        0.0
    };
    Ok((breakdown, grads))
}

/// The batch loss as a plain scalar.
pub fn batch_loss_value(
    model: &Model,
    batch: &[(usize, &Procedure)],
    ctx: &LossContext,
) -> Result<f64> {
    Ok(batch_loss(model, batch, ctx)?.0.total)
}

/// Per-batch-position auxiliary targets (projected next-step embeddings), as
/// evaluated at the model's current parameters. Finite-difference probes of
/// the total loss hold these fixed, mirroring the stop-gradient.
pub fn aux_targets(
    model: &Model,
    batch: &[(usize, &Procedure)],
    ctx: &LossContext,
) -> Result<Vec<Option<Tensor>>> {
    batch
        .iter()
        .map(|&(idx, proc)| {
            if proc.steps.len() < 2 {
                return Ok(None);
            }
            let mut tape = Tape::new(&model.store);
            let (_, f_targets) =
                model.encode_procedure(&mut tape, proc, ctx.modality, ctx.corpus_seed, idx)?;
            Ok(Some(tape.value(f_targets).clone()))
        })
        .collect()
}

/// Batch loss with the auxiliary targets frozen to explicit values; the
/// scalar whose parameter gradient is exactly what training computes.
pub fn batch_loss_value_frozen_aux(
    model: &Model,
    batch: &[(usize, &Procedure)],
    ctx: &LossContext,
    frozen_aux: &[Option<Tensor>],
) -> Result<f64> {
    Ok(batch_loss_inner(model, batch, ctx, Some(frozen_aux))?.0.total)
}

// ---------------------------------------------------------------------------
// Optimizer: Adam with decoupled weight decay, linear warmup, gradient
// clipping at a global norm.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Steps to ramp the learning rate from 0 to `lr` (one epoch's worth).
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-4,
            weight_decay: 0.01,
            warmup_steps: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }
}

pub fn lr_at(step: u64, config: &OptimConfig) -> f64 {
    if config.warmup_steps == 0 {
        return config.lr;
    }
    config.lr * (step as f64 / config.warmup_steps as f64).min(1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &crate::tape::ParamStore) -> Self {
        let shapes: Vec<Tensor> = (0..store.len())
            .map(|pid| {
                let p = store.get(pid);
                Tensor::zeros(p.rows, p.cols)
            })
            .collect();
        AdamState {
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    /// One update at an explicit learning rate (the trainer owns the warmup
    /// schedule; warmup counts steps within the current run so finetuning
    /// re-warms over its own first epoch). Frozen encoder parameters never
    /// appear in the store, so they cannot be touched here.
    pub fn apply_with_lr(
        &mut self,
        store: &mut crate::tape::ParamStore,
        grads: &mut ParamGrads,
        config: &OptimConfig,
        lr: f64,
    ) {
        self.t += 1;
        let norm = grads.global_norm();
        if config.clip_norm > 0.0 && norm > config.clip_norm {
            grads.scale(config.clip_norm / norm);
        }
        let bc1 = 1.0 - config.beta1.powi(self.t as i32);
        let bc2 = 1.0 - config.beta2.powi(self.t as i32);
        for pid in 0..store.len() {
            let g = match grads.0[pid].as_ref() {
                Some(g) => g,
                None => continue,
            };
            let m = &mut self.m[pid];
            let v = &mut self.v[pid];
            let p = store.get_mut(pid);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = config.beta1 * m.data[i] + (1.0 - config.beta1) * gi;
                v.data[i] = config.beta2 * v.data[i] + (1.0 - config.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= lr * (mhat / (vhat.sqrt() + config.eps)
                    + config.weight_decay * p.data[i]);
            }
        }
    }

    /// Update using the schedule position taken from the state's own step
    /// counter; callers that manage warmup externally use `apply_with_lr`.
    pub fn apply(
        &mut self,
        store: &mut crate::tape::ParamStore,
        grads: &mut ParamGrads,
        config: &OptimConfig,
    ) {
        let lr = lr_at(self.t, config);
        self.apply_with_lr(store, grads, config, lr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, samples::three_way_grammar, Grammar};
    use crate::model::{Model, ModelDims, ModelKind};

    pub(crate) fn tiny_model(kind: ModelKind, g: &Grammar) -> Model {
        let dims = ModelDims {
            d_f: 10,
            d_z: 4,
            ctx_layers: 1,
            ctx_heads: 2,
            dec_embed: 6,
            dec_hidden: 10,
            max_t: 8,
            max_step_len: 6,
        };
        Model::new(
            kind,
            dims,
            g.vocab.len(),
            g.vocab.v_ing(),
            g.vocab.bos,
            g.vocab.eos,
            g.vocab.pad,
            42,
            0.1,
            7,
        )
    }

    fn randomize_store(model: &mut Model, seed: u64, scale: f64) {
        let mut rng = crate::rng::Prng::new(seed);
        for pid in 0..model.store.len() {
            for v in &mut model.store.get_mut(pid).data {
                *v += scale * rng.normal();
            }
        }
    }

    #[test]
    fn beta_schedule_is_the_documented_ramp() {
        let w = LossWeights::default();
        assert_eq!(beta_at(0, &w), 0.0);
        assert_eq!(beta_at(100_000, &w), 0.2);
        assert_eq!(beta_at(50_000, &w), 0.1);
        assert_eq!(beta_at(250_000, &w), 0.2);
    }

    #[test]
    fn kl_only_loss_is_zero_at_the_standard_posterior() {
        // Posterior opens at N(0, I); with every other term toggled off the
        // total must be exactly zero.
        let g = three_way_grammar();
        let model = tiny_model(ModelKind::Cvae, &g);
        let corpus = generate_corpus(&g, 4, 0).unwrap();
        let weights = LossWeights {
            beta_max: 0.2,
            beta_anneal_steps: 0,
            ..Default::default()
        };
        let toggles = LossToggles {
            l_pred: false,
            l_aux: false,
            l_rec: false,
        };
        let ctx = LossContext {
            modality: Modality::Text,
            corpus_seed: 1,
            weights: &weights,
            toggles: &toggles,
            step: 10,
            train_seed: 2,
            dropout_p: 0.0,
        };
        let batch: Vec<(usize, &_)> = corpus.iter().enumerate().collect();
        let (b, _) = batch_loss(&model, &batch, &ctx).unwrap();
        assert_eq!(b.total, 0.0);
        assert_eq!(b.l_kl, 0.0);
    }

    #[test]
    fn loss_is_reproducible_and_additive() {
        let g = three_way_grammar();
        let mut model = tiny_model(ModelKind::Cvae, &g);
        randomize_store(&mut model, 3, 0.1);
        let corpus = generate_corpus(&g, 6, 0).unwrap();
        let weights = LossWeights {
            alpha: 3.0,
            beta_max: 0.2,
            beta_anneal_steps: 100,
            gamma: 1.0,
        };
        let toggles = LossToggles::default();
        let ctx = LossContext {
            modality: Modality::Video,
            corpus_seed: 1,
            weights: &weights,
            toggles: &toggles,
            step: 37,
            train_seed: 2,
            dropout_p: 0.1,
        };
        let batch: Vec<(usize, &_)> = corpus.iter().enumerate().collect();
        let (a, _) = batch_loss(&model, &batch, &ctx).unwrap();
        let (b, _) = batch_loss(&model, &batch, &ctx).unwrap();
        assert_eq!(a.total, b.total, "same seeds must reproduce the loss");
        let recomposed =
            a.l_pred + a.beta_current * a.l_kl + weights.alpha * a.l_aux + weights.gamma * a.l_rec;
        assert!((a.total - recomposed).abs() < 1e-9, "additivity violated");
    }

    #[test]
    fn short_procedures_are_skipped_with_count() {
        let g = three_way_grammar();
        let model = tiny_model(ModelKind::Cvae, &g);
        let corpus = generate_corpus(&g, 2, 0).unwrap();
        let mut short = corpus[0].clone();
        short.steps.truncate(1);
        let weights = LossWeights::default();
        let toggles = LossToggles::default();
        let ctx = LossContext {
            modality: Modality::Text,
            corpus_seed: 1,
            weights: &weights,
            toggles: &toggles,
            step: 0,
            train_seed: 2,
            dropout_p: 0.0,
        };
        let batch = vec![(0usize, &short), (1usize, &corpus[1])];
        let (b, _) = batch_loss(&model, &batch, &ctx).unwrap();
        assert_eq!(b.skipped, 1);
        assert_eq!(b.pairs, corpus[1].steps.len());
    }

    #[test]
    fn nan_parameters_abort_with_diagnostics() {
        let g = three_way_grammar();
        let mut model = tiny_model(ModelKind::Cvae, &g);
        let pid = model.store.id_of("predhead.l3.w").unwrap();
        model.store.get_mut(pid).data[0] = f64::NAN;
        let corpus = generate_corpus(&g, 1, 0).unwrap();
        let weights = LossWeights::default();
        let toggles = LossToggles::default();
        let ctx = LossContext {
            modality: Modality::Text,
            corpus_seed: 1,
            weights: &weights,
            toggles: &toggles,
            step: 0,
            train_seed: 2,
            dropout_p: 0.0,
        };
        let batch: Vec<(usize, &_)> = corpus.iter().enumerate().collect();
        let err = batch_loss(&model, &batch, &ctx).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    #[test]
    fn total_loss_gradients_match_finite_differences_cvae_and_baseline() {
        let g = three_way_grammar();
        for kind in [ModelKind::Cvae, ModelKind::Baseline] {
            let mut model = tiny_model(kind, &g);
            randomize_store(&mut model, 5, 0.1);
            let corpus = generate_corpus(&g, 2, 0).unwrap();
            let weights = LossWeights {
                alpha: 3.0,
                beta_max: 0.2,
                beta_anneal_steps: 10,
                gamma: 1.0,
            };
            let toggles = LossToggles::default();
            let ctx = LossContext {
                modality: Modality::Video,
                corpus_seed: 1,
                weights: &weights,
                toggles: &toggles,
                step: 5,
                train_seed: 2,
                dropout_p: 0.1,
            };
            let batch: Vec<(usize, &Procedure)> = corpus.iter().enumerate().collect();
            let (_, grads) = batch_loss(&model, &batch, &ctx).unwrap();
            let frozen = aux_targets(&model, &batch, &ctx).unwrap();
            let loss = |s: &crate::tape::ParamStore| {
                let mut m = model.clone();
                m.store = s.clone();
                batch_loss_value_frozen_aux(&m, &batch, &ctx, &frozen).unwrap()
            };
            let mut store = model.store.clone();
            let report = crate::gradcheck::check_grads_fn(
                &mut store,
                |p, i| grads.entry(p, i),
                loss,
                6,
                0x99,
            );
            assert!(
                report.max_rel_err < 1e-4,
                "{kind:?}: max rel err {} at {}",
                report.max_rel_err,
                report.worst
            );
        }
    }

    #[test]
    fn aux_loss_golden_values() {
        // Mean over coordinates, summed over rows: identical inputs score 0;
        // pred (1, 0) against target (0, 0) scores 0.5 at d = 2.
        let store = crate::tape::ParamStore::new();
        let mut t = Tape::new(&store);
        let target = Tensor::row(&[0.0, 0.0]);
        let same = t.constant(target.clone());
        let zero = t.mse_vs_const(same, &target, 1.0 / 2.0);
        assert_eq!(t.value(zero).scalar_value(), 0.0);
        let pred = t.constant(Tensor::row(&[1.0, 0.0]));
        let half = t.mse_vs_const(pred, &target, 1.0 / 2.0);
        assert_eq!(t.value(half).scalar_value(), 0.5);
    }

    #[test]
    fn aux_loss_gradient_flows_only_through_the_prediction_path() {
        // With only l_aux enabled, the frozen-target path (projection of the
        // next step) must contribute no gradient: perturbing the projection
        // head changes the target AND the prediction input (f_seq rows), so
        // isolate by comparing against a loss where the target is replaced
        // by an explicit constant. Identical gradients = detached target.
        let g = three_way_grammar();
        let mut model = tiny_model(ModelKind::Cvae, &g);
        randomize_store(&mut model, 6, 0.1);
        let corpus = generate_corpus(&g, 1, 0).unwrap();
        let proc = &corpus[0];
        let weights = LossWeights::default();
        let toggles = LossToggles {
            l_pred: false,
            l_aux: true,
            l_rec: false,
        };
        let ctx = LossContext {
            modality: Modality::Text,
            corpus_seed: 1,
            weights: &weights,
            toggles: &toggles,
            step: 0,
            train_seed: 2,
            dropout_p: 0.0,
        };
        let batch = vec![(0usize, proc)];
        let (b, grads) = batch_loss(&model, &batch, &ctx).unwrap();
        assert!(b.l_aux > 0.0);
        // The decoder is unused under this toggle set: its gradients must be
        // absent entirely.
        let dec_pid = model.store.id_of("dec.out.w").unwrap();
        assert!(grads.0[dec_pid].is_none());
        // And the prediction head must receive gradient.
        let head_pid = model.store.id_of("predhead.l3.w").unwrap();
        assert!(grads.0[head_pid].is_some());
    }

    #[test]
    fn adam_schedule_and_decay_behave() {
        let g = three_way_grammar();
        let mut model = tiny_model(ModelKind::Cvae, &g);
        let config = OptimConfig {
            lr: 1e-4,
            warmup_steps: 100,
            ..Default::default()
        };
        assert_eq!(lr_at(0, &config), 0.0);
        assert_eq!(lr_at(100, &config), 1e-4);
        assert_eq!(lr_at(250, &config), 1e-4);
        assert!((lr_at(50, &config) - 5e-5).abs() < 1e-18);

        // Weight decay with zero gradients strictly shrinks parameter norm
        // once the learning rate is positive.
        let mut state = AdamState::new(&model.store);
        state.t = 200; // past warmup
        let norm_before: f64 = (0..model.store.len())
            .map(|p| model.store.get(p).l2_norm().powi(2))
            .sum::<f64>()
            .sqrt();
        let mut zero_grads = ParamGrads(
            (0..model.store.len())
                .map(|p| {
                    let t = model.store.get(p);
                    Some(Tensor::zeros(t.rows, t.cols))
                })
                .collect(),
        );
        state.apply(&mut model.store, &mut zero_grads, &config);
        let norm_after: f64 = (0..model.store.len())
            .map(|p| model.store.get(p).l2_norm().powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(norm_after < norm_before);
    }

    #[test]
    fn frozen_encoders_are_bit_identical_after_training_steps() {
        let g = three_way_grammar();
        let mut model = tiny_model(ModelKind::Cvae, &g);
        let text_before = model.text_encoder.clone();
        let video_before = model.video_encoder.clone();
        let corpus = generate_corpus(&g, 8, 0).unwrap();
        let weights = LossWeights {
            beta_anneal_steps: 10,
            ..Default::default()
        };
        let toggles = LossToggles::default();
        let config = OptimConfig {
            lr: 1e-3,
            warmup_steps: 2,
            ..Default::default()
        };
        let mut state = AdamState::new(&model.store);
        for step in 0..10u64 {
            let ctx = LossContext {
                modality: Modality::Text,
                corpus_seed: 1,
                weights: &weights,
                toggles: &toggles,
                step,
                train_seed: 2,
                dropout_p: 0.1,
            };
            let batch: Vec<(usize, &_)> = corpus.iter().enumerate().collect();
            let (_, mut grads) = batch_loss(&model, &batch, &ctx).unwrap();
            state.apply(&mut model.store, &mut grads, &config);
        }
        assert_eq!(model.text_encoder, text_before);
        assert_eq!(model.video_encoder, video_before);
    }
}
