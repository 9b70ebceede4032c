//! Experiment orchestration shared by the CLI and the acceptance suite:
//! corpus preparation, model construction, the pretrain / zero-shot /
//! finetune / from-scratch flows, and the ablation matrix.

use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::corpus::{generate_corpus, Grammar, Procedure};
use crate::encoders::{FrozenEncoder, Modality};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_corpus, probe_branch_tv, EvalOptions};
use crate::metrics::MetricsReport;
use crate::model::{Model, ModelKind, PredictionMode};
use crate::report::NamedReport;
use crate::train::{train, Checkpoint, TrainRequest, TrainSummary};

/// Builds a model matching a config and a grammar's vocabulary.
pub fn build_model(config: &ExperimentConfig, grammar: &Grammar) -> Model {
    Model::new(
        config.model.kind,
        config.model.dims,
        grammar.vocab.len(),
        grammar.vocab.v_ing(),
        grammar.vocab.bos,
        grammar.vocab.eos,
        grammar.vocab.pad,
        config.encoder.seed,
        config.encoder.video_noise_sigma,
        config.model.init_seed,
    )
}

/// Resolves the grammar a config refers to (file or built-in desk grammar).
pub fn load_grammar(config: &ExperimentConfig) -> Result<Grammar> {
    match &config.grammar {
        Some(path) => crate::corpus::read_grammar(path),
        None => Ok(crate::corpus::desk_grammar()),
    }
}

/// A generated dataset plus the seed that keyed its frozen noise stream.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub procedures: Vec<Procedure>,
    pub corpus_seed: u64,
}

impl Dataset {
    pub fn generate(grammar: &Grammar, n: usize, seed: u64) -> Result<Self> {
        Ok(Dataset {
            procedures: generate_corpus(grammar, n, seed)?,
            corpus_seed: seed,
        })
    }
}

/// Pretrains a fresh checkpoint on a corpus.
pub fn pretrain(
    config: &ExperimentConfig,
    grammar: &Grammar,
    dataset: &Dataset,
    modality: Modality,
    out_dir: Option<&Path>,
) -> Result<(Checkpoint, TrainSummary)> {
    config.validate()?;
    let model = build_model(config, grammar);
    let mut ckpt = Checkpoint::fresh(grammar.clone(), model, config.clone());
    let summary = train(
        &mut ckpt,
        &TrainRequest {
            corpus: &dataset.procedures,
            modality,
            corpus_seed: dataset.corpus_seed,
            epochs: config.train.epochs,
            log_path: out_dir.map(|d| d.join("train_log.jsonl")),
            checkpoint_path: out_dir.map(|d| d.join("checkpoint.json")),
        },
    )?;
    Ok((ckpt, summary))
}

/// Continues training an existing checkpoint on a (video) corpus; the frozen
/// encoders are untouched by construction, everything trainable updates.
pub fn finetune(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    modality: Modality,
    epochs: u64,
    out_dir: Option<&Path>,
) -> Result<(Checkpoint, TrainSummary)> {
    let mut tuned = ckpt.clone();
    let summary = train(
        &mut tuned,
        &TrainRequest {
            corpus: &dataset.procedures,
            modality,
            corpus_seed: dataset.corpus_seed,
            epochs,
            log_path: out_dir.map(|d| d.join("finetune_log.jsonl")),
            checkpoint_path: out_dir.map(|d| d.join("checkpoint_finetuned.json")),
        },
    )?;
    Ok((tuned, summary))
}

/// Evaluates a checkpoint on a corpus in one mode.
pub fn evaluate(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    modality: Modality,
    mode: PredictionMode,
) -> Result<MetricsReport> {
    let k = match mode {
        PredictionMode::Single => 1,
        PredictionMode::Multi => ckpt.config.eval.k,
    };
    evaluate_corpus(
        &ckpt.model,
        &dataset.procedures,
        &ckpt.grammar.vocab,
        &EvalOptions {
            modality,
            mode,
            k,
            nucleus_p: ckpt.config.decode.nucleus_p,
            corpus_seed: dataset.corpus_seed,
            sample_seed: ckpt.config.eval.seed,
        },
    )
}

/// Swaps the checkpoint's video encoder for one with a different noise
/// scale, same seed (the sigma sweep of the transfer experiments).
pub fn with_video_sigma(ckpt: &Checkpoint, sigma: f64) -> Checkpoint {
    let mut out = ckpt.clone();
    out.model.video_encoder = FrozenEncoder::new(
        Modality::Video,
        out.model.video_encoder.seed,
        out.model.vocab_len,
        out.model.dims.d_f,
        sigma,
    );
    out.config.encoder.video_noise_sigma = sigma;
    out
}

/// Zero-shot transfer evaluation: text-pretrained checkpoint, video-encoded
/// inputs, no updates. Errors when the config's encoder seed disagrees with
/// the checkpoint (the frozen pair would no longer be aligned).
pub fn transfer_eval(
    ckpt: &Checkpoint,
    config: &ExperimentConfig,
    dataset: &Dataset,
    mode: PredictionMode,
) -> Result<MetricsReport> {
    if config.encoder.seed != ckpt.model.text_encoder.seed {
        return Err(Error::data(format!(
            "encoder seed mismatch: checkpoint {} vs config {}; the frozen pair would not be aligned",
            ckpt.model.text_encoder.seed, config.encoder.seed
        )));
    }
    let evalckpt = if config.encoder.video_noise_sigma != ckpt.config.encoder.video_noise_sigma {
        with_video_sigma(ckpt, config.encoder.video_noise_sigma)
    } else {
        ckpt.clone()
    };
    evaluate(&evalckpt, dataset, Modality::Video, mode)
}

/// Distribution probe at the grammar's designated branch point.
pub fn probe_tv(
    ckpt: &Checkpoint,
    modality: Modality,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let probe = ckpt
        .grammar
        .branch_probes
        .first()
        .ok_or_else(|| Error::data("grammar declares no branch probe"))?;
    probe_branch_tv(
        &ckpt.model,
        &ckpt.grammar,
        &probe.prefix,
        n_samples,
        modality,
        ckpt.config.decode.nucleus_p,
        seed,
    )
}

/// Sizes and seeds of a full desk experiment.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub config: ExperimentConfig,
    pub n_train: usize,
    pub n_video: usize,
    pub n_eval: usize,
    pub finetune_epochs: u64,
    pub scratch_epochs: u64,
    pub seed_text: u64,
    pub seed_video: u64,
    pub seed_eval_seen: u64,
    pub seed_eval_unseen: u64,
}

impl ExperimentPlan {
    pub fn desk_default() -> Self {
        ExperimentPlan {
            config: ExperimentConfig::desk(),
            n_train: 20_000,
            n_video: 1_000,
            n_eval: 300,
            finetune_epochs: 3,
            scratch_epochs: 8,
            seed_text: 101,
            seed_video: 202,
            seed_eval_seen: 303,
            seed_eval_unseen: 404,
        }
    }
}

/// Everything the ablation matrix produces.
pub struct MatrixOutputs {
    pub reports: Vec<NamedReport>,
    pub kl_free_diverged: bool,
    pub kl_free_reason: Option<String>,
}

/// Runs the full experiment matrix: {generative, baseline} x {full loss,
/// aux off} x {seen, unseen} x {single, multi}, plus the zero-shot /
/// finetuned / from-scratch video block and a KL-free divergence probe.
/// Reports land in `out_dir` when given.
pub fn run_matrix(plan: &ExperimentPlan, out_dir: Option<&PathBuf>) -> Result<MatrixOutputs> {
    let grammar = load_grammar(&plan.config)?;
    let unseen = plan.config.split.unseen_types.clone();
    let seen_grammar = grammar.restricted_to(|t| !unseen.iter().any(|u| u == t))?;
    let unseen_grammar = grammar.restricted_to(|t| unseen.iter().any(|u| u == t))?;

    let text = Dataset::generate(&seen_grammar, plan.n_train, plan.seed_text)?;
    let video = Dataset::generate(&seen_grammar, plan.n_video, plan.seed_video)?;
    let eval_seen = Dataset::generate(&seen_grammar, plan.n_eval, plan.seed_eval_seen)?;
    let eval_unseen = Dataset::generate(&unseen_grammar, plan.n_eval, plan.seed_eval_unseen)?;

    let mut reports = Vec::new();
    let mut push = |label: &str, report: MetricsReport| {
        reports.push(NamedReport::new(label, report));
    };

    // Main generative model, text-pretrained.
    let (main, _) = pretrain(&plan.config, &grammar, &text, Modality::Text, None)?;
    for (ds, split) in [(&eval_seen, "seen"), (&eval_unseen, "unseen")] {
        for mode in [PredictionMode::Single, PredictionMode::Multi] {
            let tag = if matches!(mode, PredictionMode::Single) { "S" } else { "M" };
            push(
                &format!("cvae/text/{split}/{tag}"),
                evaluate(&main, ds, Modality::Text, mode)?,
            );
            push(
                &format!("cvae/zero-shot/{split}/{tag}"),
                evaluate(&main, ds, Modality::Video, mode)?,
            );
        }
    }

    // Finetuned on the small video corpus; from-scratch control.
    let (tuned, _) = finetune(&main, &video, Modality::Video, plan.finetune_epochs, None)?;
    let mut scratch_config = plan.config.clone();
    scratch_config.train.epochs = plan.scratch_epochs;
    let (scratch, _) = pretrain(&scratch_config, &grammar, &video, Modality::Video, None)?;
    for (ds, split) in [(&eval_seen, "seen"), (&eval_unseen, "unseen")] {
        for mode in [PredictionMode::Single, PredictionMode::Multi] {
            let tag = if matches!(mode, PredictionMode::Single) { "S" } else { "M" };
            push(
                &format!("cvae/finetuned/{split}/{tag}"),
                evaluate(&tuned, ds, Modality::Video, mode)?,
            );
            push(
                &format!("cvae/scratch/{split}/{tag}"),
                evaluate(&scratch, ds, Modality::Video, mode)?,
            );
        }
    }

    // Deterministic baseline.
    let mut baseline_config = plan.config.clone();
    baseline_config.model.kind = ModelKind::Baseline;
    let (baseline, _) = pretrain(&baseline_config, &grammar, &text, Modality::Text, None)?;
    for (ds, split) in [(&eval_seen, "seen"), (&eval_unseen, "unseen")] {
        for mode in [PredictionMode::Single, PredictionMode::Multi] {
            let tag = if matches!(mode, PredictionMode::Single) { "S" } else { "M" };
            push(
                &format!("baseline/text/{split}/{tag}"),
                evaluate(&baseline, ds, Modality::Text, mode)?,
            );
        }
    }

    // Loss-toggle ablation: auxiliary loss off.
    let mut aux_off_config = plan.config.clone();
    aux_off_config.loss.toggles.l_aux = false;
    let (aux_off, _) = pretrain(&aux_off_config, &grammar, &text, Modality::Text, None)?;
    for mode in [PredictionMode::Single, PredictionMode::Multi] {
        let tag = if matches!(mode, PredictionMode::Single) { "S" } else { "M" };
        push(
            &format!("cvae-no-aux/text/seen/{tag}"),
            evaluate(&aux_off, &eval_seen, Modality::Text, mode)?,
        );
    }

    // KL-free run: beta pinned to zero; the sentinel must flag it.
    let mut kl_free_config = plan.config.clone();
    kl_free_config.loss.beta_max = 0.0;
    let (_, summary) = pretrain(&kl_free_config, &grammar, &text, Modality::Text, None)?;

    // Distribution probes at the designated branch.
    let mut main_probe = evaluate(&main, &eval_seen, Modality::Text, PredictionMode::Multi)?;
    main_probe.diversity_tv = Some(probe_tv(&main, Modality::Text, 200, 77)?);
    push("cvae/probe/seen/M", main_probe);
    let mut baseline_probe =
        evaluate(&baseline, &eval_seen, Modality::Text, PredictionMode::Multi)?;
    baseline_probe.diversity_tv = Some(probe_tv(&baseline, Modality::Text, 200, 77)?);
    push("baseline/probe/seen/M", baseline_probe);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        for r in &reports {
            let name = r.label.replace('/', "_");
            r.save(&dir.join(format!("report_{name}.json")))?;
        }
        let table = crate::report::render_table(&reports, plan.config.metrics.averaging);
        std::fs::write(dir.join("matrix.tsv"), table)?;
    }

    Ok(MatrixOutputs {
        reports,
        kl_free_diverged: summary.diverged,
        kl_free_reason: summary.divergence_reason,
    })
}
