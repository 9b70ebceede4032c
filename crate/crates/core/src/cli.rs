//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::corpus::{read_corpus, write_corpus, write_grammar, Grammar};
use crate::encoders::Modality;
use crate::error::{Error, Result};
use crate::evaluate::{
    pairs_from_predictions, predict_pairs, read_prediction_file, write_prediction_file,
    EvalOptions,
};
use crate::harness::{self, Dataset, ExperimentPlan};
use crate::model::{PredictRequest, PredictionMode};
use crate::report::NamedReport;
use crate::train::Checkpoint;

#[derive(Parser)]
#[command(
    name = "stepcast",
    about = "Generative next-step anticipation on synthetic procedural corpora",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Multi,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Text,
    Video,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Modality {
        match m {
            ModalityArg::Text => Modality::Text,
            ModalityArg::Video => Modality::Video,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Write a configuration preset to a file.
    InitConfig(InitConfigArgs),
    /// Sample a corpus from a grammar.
    GenCorpus(GenCorpusArgs),
    /// Train a fresh model on a (text) corpus.
    Pretrain(PretrainArgs),
    /// Continue training a checkpoint on a (video) corpus.
    Finetune(FinetuneArgs),
    /// Evaluate a text-pretrained checkpoint on video-encoded data.
    TransferEval(TransferEvalArgs),
    /// Predict next steps for each context in a corpus file.
    Predict(PredictArgs),
    /// Evaluate a checkpoint (or a prediction file) against ground truth.
    Eval(EvalArgs),
    /// Join evaluation reports into a flat comparison table.
    Report(ReportArgs),
    /// Run the full experiment matrix.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct InitConfigArgs {
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Grammar file; defaults to the built-in desk grammar.
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "0")]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Keep only these recipe types (comma separated).
    #[arg(long, value_delimiter = ',')]
    only_types: Vec<String>,
    /// Drop these recipe types (comma separated).
    #[arg(long, value_delimiter = ',')]
    exclude_types: Vec<String>,
    /// Also write the effective grammar to this path.
    #[arg(long)]
    emit_grammar: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Seed that identifies the corpus noise stream (video features).
    #[arg(long, default_value = "0")]
    corpus_seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    modality: ModalityArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "0")]
    corpus_seed: u64,
    #[arg(long, value_enum, default_value = "video")]
    modality: ModalityArg,
    #[arg(long)]
    epochs: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TransferEvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config for the transfer (encoder seed must match the checkpoint);
    /// defaults to the checkpoint's own config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Video noise scale override for sigma sweeps.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "0")]
    corpus_seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    /// Output prefix; writes <prefix>.single.json / <prefix>.multi.json.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus file whose records are observed contexts (all steps given).
    #[arg(long)]
    contexts: PathBuf,
    #[arg(long, default_value = "0")]
    corpus_seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    modality: ModalityArg,
    #[arg(long, value_enum, default_value = "multi")]
    mode: ModeArg,
    #[arg(long, default_value = "5")]
    k: usize,
    #[arg(long, default_value = "7")]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "0")]
    corpus_seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    modality: ModalityArg,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    /// Score an existing prediction file instead of running the model.
    #[arg(long)]
    from_predictions: Option<PathBuf>,
    /// Also write the generated predictions to this file.
    #[arg(long)]
    predictions_out: Option<PathBuf>,
    /// Also run the grammar branch probe and attach its TV distance.
    #[arg(long, default_value = "false")]
    probe: bool,
    /// Label recorded in the report files.
    #[arg(long, default_value = "model")]
    label: String,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    reports: Vec<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Config file; defaults to the desk preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "4000")]
    n_train: usize,
    #[arg(long, default_value = "600")]
    n_video: usize,
    #[arg(long, default_value = "200")]
    n_eval: usize,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long, default_value = "3")]
    finetune_epochs: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run() -> ! {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits; everything else is a
            // usage error (exit code 1).
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => std::process::exit(0),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::InitConfig(args) => init_config(args),
        Command::GenCorpus(args) => gen_corpus(args),
        Command::Pretrain(args) => pretrain(args),
        Command::Finetune(args) => finetune(args),
        Command::TransferEval(args) => transfer_eval(args),
        Command::Predict(args) => predict(args),
        Command::Eval(args) => eval(args),
        Command::Report(args) => report(args),
        Command::Ablate(args) => ablate(args),
    }
}

fn load_grammar_arg(path: &Option<PathBuf>) -> Result<Grammar> {
    match path {
        Some(p) => crate::corpus::read_grammar(p),
        None => Ok(crate::corpus::desk_grammar()),
    }
}

fn init_config(args: InitConfigArgs) -> Result<()> {
    let config = match args.preset {
        PresetArg::Desk => ExperimentConfig::desk(),
        PresetArg::Paper => ExperimentConfig::paper(),
    };
    config.save(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn gen_corpus(args: GenCorpusArgs) -> Result<()> {
    if args.n == 0 {
        return Err(Error::usage("--n must be at least 1"));
    }
    if !args.only_types.is_empty() && !args.exclude_types.is_empty() {
        return Err(Error::usage("--only-types and --exclude-types are exclusive"));
    }
    let mut grammar = load_grammar_arg(&args.grammar)?;
    if !args.only_types.is_empty() {
        grammar = grammar.restricted_to(|t| args.only_types.iter().any(|x| x == t))?;
    } else if !args.exclude_types.is_empty() {
        grammar = grammar.restricted_to(|t| !args.exclude_types.iter().any(|x| x == t))?;
    }
    let corpus = crate::corpus::generate_corpus(&grammar, args.n, args.seed)?;
    write_corpus(&args.out, &corpus, &grammar.vocab)?;
    if let Some(gpath) = &args.emit_grammar {
        write_grammar(gpath, &grammar)?;
    }
    println!(
        "wrote {} procedures to {} (seed {})",
        corpus.len(),
        args.out.display(),
        args.seed
    );
    Ok(())
}

fn pretrain(args: PretrainArgs) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    let grammar = harness::load_grammar(&config)?;
    let procedures = read_corpus(&args.corpus, &grammar.vocab, grammar.max_t)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let dataset = Dataset {
        procedures,
        corpus_seed: args.corpus_seed,
    };
    let (_, summary) = harness::pretrain(
        &config,
        &grammar,
        &dataset,
        args.modality.into(),
        Some(&args.out_dir),
    )?;
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(args.out_dir.join("train_summary.json"), text)?;
    println!(
        "pretrained for {} steps; val NLL {:.4} -> {:.4}; checkpoint in {}",
        summary.steps_run,
        summary.first_val_nll,
        summary.final_val_nll,
        args.out_dir.display()
    );
    if summary.diverged {
        println!(
            "warning: divergence sentinel triggered: {}",
            summary.divergence_reason.as_deref().unwrap_or("unknown")
        );
    }
    Ok(())
}

fn finetune(args: FinetuneArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let procedures = read_corpus(&args.corpus, &ckpt.grammar.vocab, ckpt.grammar.max_t)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let dataset = Dataset {
        procedures,
        corpus_seed: args.corpus_seed,
    };
    let (_, summary) = harness::finetune(
        &ckpt,
        &dataset,
        args.modality.into(),
        args.epochs,
        Some(&args.out_dir),
    )?;
    println!(
        "finetuned to step {}; val NLL {:.4} -> {:.4}; checkpoint in {}",
        summary.steps_run,
        summary.first_val_nll,
        summary.final_val_nll,
        args.out_dir.display()
    );
    Ok(())
}

/// `prefix` + "." + suffix, leaving any dots inside the prefix alone
/// (PathBuf::with_extension would clobber them).
fn suffixed(prefix: &std::path::Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    prefix.with_file_name(name)
}

fn modes_of(mode: ModeArg) -> Vec<PredictionMode> {
    match mode {
        ModeArg::Single => vec![PredictionMode::Single],
        ModeArg::Multi => vec![PredictionMode::Multi],
        ModeArg::Both => vec![PredictionMode::Single, PredictionMode::Multi],
    }
}

fn mode_suffix(mode: PredictionMode) -> &'static str {
    match mode {
        PredictionMode::Single => "single",
        PredictionMode::Multi => "multi",
    }
}

fn transfer_eval(args: TransferEvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ckpt.config.clone(),
    };
    if let Some(sigma) = args.sigma {
        config.encoder.video_noise_sigma = sigma;
    }
    let procedures = read_corpus(&args.corpus, &ckpt.grammar.vocab, ckpt.grammar.max_t)?;
    let dataset = Dataset {
        procedures,
        corpus_seed: args.corpus_seed,
    };
    for mode in modes_of(args.mode) {
        let report = harness::transfer_eval(&ckpt, &config, &dataset, mode)?;
        let path = suffixed(&args.out_prefix, &format!("{}.json", mode_suffix(mode)));
        NamedReport::new(format!("transfer/{}", mode_suffix(mode)), report).save(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    if matches!(args.mode, ModeArg::Both) {
        return Err(Error::usage("predict takes --mode single or --mode multi"));
    }
    if args.k == 0 {
        return Err(Error::usage("--k must be at least 1"));
    }
    let contexts = read_corpus(&args.contexts, &ckpt.grammar.vocab, ckpt.grammar.max_t)?;
    let mode = modes_of(args.mode)[0];
    let mut records = Vec::new();
    for (i, proc) in contexts.iter().enumerate() {
        let candidates = ckpt.model.predict(&PredictRequest {
            ingredients: &proc.ingredients,
            steps: &proc.steps,
            modality: args.modality.into(),
            mode,
            k: args.k,
            nucleus_p: ckpt.config.decode.nucleus_p,
            corpus_seed: args.corpus_seed,
            proc_index: i,
            sample_seed: crate::rng::Prng::derive(args.seed, &[i as u64]).next_u64(),
        })?;
        for (ci, cand) in candidates.iter().enumerate() {
            records.push(crate::evaluate::PredictionRecord {
                context_id: format!("{i}:{}", proc.steps.len()),
                candidate_index: ci,
                tokens: cand
                    .sentence
                    .tokens
                    .iter()
                    .map(|&t| ckpt.grammar.vocab.surface(t).to_string())
                    .collect(),
                logprob: cand.sentence.logprob,
                latent_seed: cand.latent_seed,
                terminated: cand.sentence.terminated,
            });
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    use std::io::Write;
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("wrote {} predictions to {}", records.len(), args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let corpus = read_corpus(&args.corpus, &ckpt.grammar.vocab, ckpt.grammar.max_t)?;

    if let Some(pred_path) = &args.from_predictions {
        let records = read_prediction_file(pred_path)?;
        let pairs = pairs_from_predictions(&records, &corpus, &ckpt.grammar.vocab)?;
        let k = pairs.iter().map(|p| p.candidates.len()).max().unwrap_or(1);
        let mode = if k > 1 {
            PredictionMode::Multi
        } else {
            PredictionMode::Single
        };
        let report = crate::metrics::score_pairs(&pairs, &ckpt.grammar.vocab, mode, k)?;
        let path = suffixed(&args.out_prefix, "offline.json");
        NamedReport::new(format!("{}/offline", args.label), report).save(&path)?;
        println!("wrote {}", path.display());
        return Ok(());
    }

    let dataset = Dataset {
        procedures: corpus,
        corpus_seed: args.corpus_seed,
    };
    for mode in modes_of(args.mode) {
        let k = match mode {
            PredictionMode::Single => 1,
            PredictionMode::Multi => ckpt.config.eval.k,
        };
        let opts = EvalOptions {
            modality: args.modality.into(),
            mode,
            k,
            nucleus_p: ckpt.config.decode.nucleus_p,
            corpus_seed: dataset.corpus_seed,
            sample_seed: ckpt.config.eval.seed,
        };
        let pairs = predict_pairs(&ckpt.model, &dataset.procedures, &opts)?;
        if let Some(out) = &args.predictions_out {
            let path = suffixed(out, &format!("{}.jsonl", mode_suffix(mode)));
            write_prediction_file(&path, &pairs, &ckpt.grammar.vocab)?;
        }
        let mut report = crate::metrics::score_pairs(&pairs, &ckpt.grammar.vocab, mode, k)?;
        if args.probe && matches!(mode, PredictionMode::Multi) {
            report.diversity_tv =
                Some(harness::probe_tv(&ckpt, args.modality.into(), 200, 77)?);
        }
        let path = suffixed(&args.out_prefix, &format!("{}.json", mode_suffix(mode)));
        NamedReport::new(format!("{}/{}", args.label, mode_suffix(mode)), report).save(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &args.reports {
        reports.push(NamedReport::load(path)?);
    }
    let averaging = crate::metrics::Averaging::Both;
    let table = crate::report::render_table(&reports, averaging);
    std::fs::write(&args.out, &table)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let mut plan = ExperimentPlan::desk_default();
    if let Some(cpath) = &args.config {
        plan.config = ExperimentConfig::load(cpath)?;
    }
    plan.n_train = args.n_train;
    plan.n_video = args.n_video;
    plan.n_eval = args.n_eval;
    plan.finetune_epochs = args.finetune_epochs;
    if let Some(epochs) = args.epochs {
        plan.config.train.epochs = epochs;
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let outputs = harness::run_matrix(&plan, Some(&args.out_dir))?;
    println!(
        "matrix complete: {} reports in {}",
        outputs.reports.len(),
        args.out_dir.display()
    );
    if outputs.kl_free_diverged {
        println!(
            "KL-free run flagged as diverged: {}",
            outputs.kl_free_reason.as_deref().unwrap_or("unknown")
        );
    } else {
        println!("warning: KL-free run was NOT flagged by the divergence sentinel");
    }
    Ok(())
}
