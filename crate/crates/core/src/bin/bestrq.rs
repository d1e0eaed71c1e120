use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use bestrq::data::{compute_stats, read_corpus, stack_frames, synth_corpus, write_corpus, SyntheticTaskSpec, Utterance};
use bestrq::encoder::{ContextMode, EncoderConfig};
use bestrq::latency::{compare_hypotheses, parse_hypotheses};
use bestrq::quantizer::{
    load_quantizer, save_quantizer, utilization, Quantizer, RandomProjectionQuantizer, SequenceLabeler, VqVaeConfig,
    VqVariant,
};
use bestrq::training::{
    composed_loss_grad_check, data_scaling_experiment, direct_asr_probe, fit_vqvae_targets, load_checkpoint,
    normalize_all, run_finetune, run_pretrain, scaling_csv, DirectAsrConfig, FinetuneConfig, FinetuneInit,
    PretrainConfig, QuantizerConfig, ScalingConfig,
};
use bestrq::{Error, ErrorCategory};

const OUT_ENV: &str = "BESTRQ_OUT";
const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Parser)]
#[command(name = "bestrq", version, about = "Random-projection quantizer pre-training experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run config; TOML unless the file ends in `.json`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run's main seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: $BESTRQ_OUT/<command>, else runs/<command>].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth,
    /// Per-dimension feature statistics of a corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Label a corpus with a random-projection quantizer.
    Quantize {
        #[arg(long)]
        corpus: PathBuf,
        /// Use a saved quantizer instead of building one from the config.
        #[arg(long)]
        quantizer: Option<PathBuf>,
        /// Store only the seed and shape in the saved quantizer.
        #[arg(long)]
        seed_only: bool,
    },
    /// Codebook utilization of a quantizer over a corpus.
    ProbeCodebook {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        quantizer: Option<PathBuf>,
    },
    /// Masked-prediction pre-training.
    Pretrain {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// CTC fine-tuning, from scratch or from a checkpoint.
    Finetune {
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Recognizer trained on quantizer labels.
    DirectAsr {
        #[arg(long)]
        quantizer: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Pre-training data-fraction sweep.
    Scaling {
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Relative word latency of `comp` against `base`.
    Latency {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        comp: PathBuf,
    },
    /// Finite-difference check of the pre-training gradient.
    GradCheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Stats { .. } => "stats",
            Command::Quantize { .. } => "quantize",
            Command::ProbeCodebook { .. } => "probe-codebook",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::DirectAsr { .. } => "direct-asr",
            Command::Scaling { .. } => "scaling",
            Command::Latency { .. } => "latency",
            Command::GradCheck => "grad-check",
        }
    }
}

/// A corpus on disk, or a synthetic one generated on the fly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DataSource {
    path: Option<PathBuf>,
    task: SyntheticTaskSpec,
    count: usize,
    seed: u64,
}

impl DataSource {
    fn synthetic(count: usize, seed: u64) -> Self {
        Self {
            path: None,
            task: SyntheticTaskSpec::default(),
            count,
            seed,
        }
    }

    fn with_path(mut self, path: Option<PathBuf>) -> Self {
        if path.is_some() {
            self.path = path;
        }
        self
    }

    fn load(&self) -> Result<Vec<Utterance>> {
        let corpus = match &self.path {
            Some(p) => read_corpus(p)?,
            None => synth_corpus(&self.task, self.count, self.seed)?,
        };
        if corpus.is_empty() {
            return Err(Error::InvalidInput("corpus is empty".into()).into());
        }
        Ok(corpus)
    }

    fn validate(&self) -> Result<()> {
        if self.path.is_none() {
            self.task.validate()?;
            if self.count == 0 {
                return Err(Error::Config("synthetic corpus count must be at least 1".into()).into());
            }
        }
        Ok(())
    }
}

impl Default for DataSource {
    fn default() -> Self {
        Self::synthetic(200, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TargetKind {
    RandomProjection,
    ProjectionVqvae,
    TransformerVqvae,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SynthRun {
    task: SyntheticTaskSpec,
    count: usize,
    seed: u64,
}

impl Default for SynthRun {
    fn default() -> Self {
        Self {
            task: SyntheticTaskSpec::default(),
            count: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct QuantizeRun {
    quantizer: QuantizerConfig,
    stack: usize,
}

impl Default for QuantizeRun {
    fn default() -> Self {
        Self {
            quantizer: QuantizerConfig::default(),
            stack: 4,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PretrainRun {
    pretrain: PretrainConfig,
    targets: TargetKind,
    vqvae: VqVaeConfig,
    vqvae_seed: u64,
    corpus: DataSource,
}

impl Default for PretrainRun {
    fn default() -> Self {
        Self {
            pretrain: PretrainConfig::default(),
            targets: TargetKind::RandomProjection,
            vqvae: VqVaeConfig::default(),
            vqvae_seed: 0,
            corpus: DataSource::synthetic(1000, 1),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FinetuneRun {
    finetune: FinetuneConfig,
    init: Option<PathBuf>,
    /// Defaults to the synthetic task vocabulary, or the largest
    /// transcript token plus one for corpora on disk.
    token_vocab_size: Option<usize>,
    train: DataSource,
    eval: DataSource,
}

impl Default for FinetuneRun {
    fn default() -> Self {
        Self {
            finetune: FinetuneConfig::default(),
            init: None,
            token_vocab_size: None,
            train: DataSource::synthetic(200, 2),
            eval: DataSource::synthetic(100, 3),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DirectAsrRun {
    probe: DirectAsrConfig,
    targets: TargetKind,
    quantizer: QuantizerConfig,
    vqvae: VqVaeConfig,
    vqvae_seed: u64,
    quantizer_path: Option<PathBuf>,
    token_vocab_size: Option<usize>,
    train: DataSource,
    eval: DataSource,
}

impl Default for DirectAsrRun {
    fn default() -> Self {
        Self {
            probe: DirectAsrConfig::default(),
            targets: TargetKind::RandomProjection,
            quantizer: QuantizerConfig::default(),
            vqvae: VqVaeConfig::default(),
            vqvae_seed: 0,
            quantizer_path: None,
            token_vocab_size: None,
            train: DataSource::synthetic(200, 2),
            eval: DataSource::synthetic(100, 3),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ScalingRun {
    scaling: ScalingConfig,
    token_vocab_size: Option<usize>,
    unlabeled: DataSource,
    train: DataSource,
    eval: DataSource,
}

impl Default for ScalingRun {
    fn default() -> Self {
        Self {
            scaling: ScalingConfig::default(),
            token_vocab_size: None,
            unlabeled: DataSource::synthetic(1024, 1),
            train: DataSource::synthetic(200, 2),
            eval: DataSource::synthetic(100, 3),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GradCheckRun {
    encoder: EncoderConfig,
    frames: usize,
    seed: u64,
    eps: f64,
    tolerance: f64,
}

impl Default for GradCheckRun {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig {
                num_layers: 2,
                d_model: 8,
                num_heads: 2,
                ffn_dim: 16,
                input_dim: 6,
                vocab_size: 5,
                context_mode: ContextMode::causal_lookahead(None, 1),
                seed: 0,
            },
            frames: 6,
            seed: 0,
            eps: 1e-5,
            tolerance: 1e-4,
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}

fn out_dir(global: &Global, command: &str) -> PathBuf {
    if let Some(out) = &global.out {
        return out.clone();
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
        _ => PathBuf::from("runs").join(command),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn prepare_out(out: &Path, resolved: &impl Serialize) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    write_file(&out.join(RESOLVED_CONFIG), &serde_json::to_vec_pretty(resolved)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer(&mut stdout, value)?;
    writeln!(stdout)?;
    Ok(())
}

fn token_vocab(explicit: Option<usize>, sources: &[(&DataSource, &[Utterance])]) -> usize {
    if let Some(v) = explicit {
        return v;
    }
    if let Some((src, _)) = sources.iter().find(|(s, _)| s.path.is_none()) {
        return src.task.token_vocab_size;
    }
    sources
        .iter()
        .flat_map(|(_, utts)| utts.iter().flat_map(|u| u.transcript.iter().copied()))
        .max()
        .map_or(1, |m| m + 1)
}

/// Quantizer over stacked frames of `corpus`, normalized with its own
/// statistics.
fn build_quantizer(
    targets: TargetKind,
    quantizer: &QuantizerConfig,
    vqvae: &VqVaeConfig,
    vqvae_seed: u64,
    stack: usize,
    corpus: &[Utterance],
) -> Result<Quantizer> {
    let d = corpus[0].features.dim();
    Ok(match targets {
        TargetKind::RandomProjection => {
            let pre = PretrainConfig {
                quantizer: *quantizer,
                stack,
                ..PretrainConfig::default()
            };
            Quantizer::RandomProjection(RandomProjectionQuantizer::new(pre.rpq_spec(d))?)
        }
        TargetKind::ProjectionVqvae | TargetKind::TransformerVqvae => {
            let variant = if targets == TargetKind::ProjectionVqvae {
                VqVariant::Projection
            } else {
                VqVariant::Transformer
            };
            let pre = PretrainConfig {
                stack,
                ..PretrainConfig::default()
            };
            fit_vqvae_targets(variant, corpus, &pre, vqvae, vqvae_seed)?.0
        }
    })
}

fn label_corpus(q: &Quantizer, corpus: &[Utterance], stack: usize) -> Result<Vec<Vec<Option<usize>>>> {
    let stats = compute_stats(corpus.iter().map(|u| &u.features))?;
    normalize_all(corpus, &stats)?
        .iter()
        .map(|s| Ok(q.label_sequence(&stack_frames(s, stack)?)?))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let cfg_path = cli.global.config.as_deref();
    let seed = cli.global.seed;
    match cli.command {
        Command::Synth => {
            let mut cfg: SynthRun = load_config(cfg_path)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.task.validate()?;
            let out = out_dir(&cli.global, name);
            prepare_out(&out, &cfg)?;
            let corpus = synth_corpus(&cfg.task, cfg.count, cfg.seed)?;
            write_corpus(&out, &corpus)?;
            log::info!("wrote {} utterances to {}", corpus.len(), out.display());
        }
        Command::Stats { corpus } => {
            let out = out_dir(&cli.global, name);
            prepare_out(&out, &serde_json::json!({ "corpus": corpus }))?;
            let utts = read_corpus(&corpus)?;
            let stats = compute_stats(utts.iter().map(|u| &u.features))?;
            write_json(&out.join("stats.json"), &stats)?;
            print_json(&stats)?;
        }
        Command::Quantize {
            corpus,
            quantizer,
            seed_only,
        } => {
            let mut cfg: QuantizeRun = load_config(cfg_path)?;
            cfg.quantizer.seed = seed.unwrap_or(cfg.quantizer.seed);
            let out = out_dir(&cli.global, name);
            prepare_out(&out, &cfg)?;
            let utts = read_corpus(&corpus)?;
            let q = match quantizer {
                Some(p) => load_quantizer(p)?,
                None => build_quantizer(
                    TargetKind::RandomProjection,
                    &cfg.quantizer,
                    &VqVaeConfig::default(),
                    0,
                    cfg.stack,
                    &utts,
                )?,
            };
            let labels = label_corpus(&q, &utts, cfg.stack)?;
            let mut lines = String::new();
            for (u, l) in utts.iter().zip(&labels) {
                lines.push_str(&serde_json::to_string(&serde_json::json!({ "id": u.id, "labels": l }))?);
                lines.push('\n');
            }
            write_file(&out.join("labels.jsonl"), lines.as_bytes())?;
            save_quantizer(&q, out.join("quantizer.bin"), seed_only)?;
            let report = utilization(labels.iter().flatten().flatten().copied(), q.vocab_size())?;
            write_json(&out.join("utilization.json"), &report)?;
        }
        Command::ProbeCodebook { corpus, quantizer } => {
            let mut cfg: QuantizeRun = load_config(cfg_path)?;
            cfg.quantizer.seed = seed.unwrap_or(cfg.quantizer.seed);
            let out = out_dir(&cli.global, name);
            prepare_out(&out, &cfg)?;
            let utts = read_corpus(&corpus)?;
            let q = match quantizer {
                Some(p) => load_quantizer(p)?,
                None => build_quantizer(
                    TargetKind::RandomProjection,
                    &cfg.quantizer,
                    &VqVaeConfig::default(),
                    0,
                    cfg.stack,
                    &utts,
                )?,
            };
            let labels = label_corpus(&q, &utts, cfg.stack)?;
            let report = utilization(labels.iter().flatten().flatten().copied(), q.vocab_size())?;
            write_json(&out.join("utilization.json"), &report)?;
            print_json(&serde_json::json!({
                "codes_used_fraction": report.codes_used_fraction,
                "normalized_entropy": report.normalized_entropy,
                "labels": report.total(),
            }))?;
        }
        Command::Pretrain { corpus } => {
            let mut cfg: PretrainRun = load_config(cfg_path)?;
            cfg.pretrain.seed = seed.unwrap_or(cfg.pretrain.seed);
            cfg.corpus = cfg.corpus.with_path(corpus);
            cfg.corpus.validate()?;
            cfg.pretrain.validate(None)?;
            let out = out_dir(&cli.global, name);
            prepare_out(&out, &cfg)?;
            let utts = cfg.corpus.load()?;
            let q = match cfg.targets {
                TargetKind::RandomProjection => None,
                kind => {
                    let variant = if kind == TargetKind::ProjectionVqvae {
                        VqVariant::Projection
                    } else {
                        VqVariant::Transformer
                    };
                    Some(fit_vqvae_targets(variant, &utts, &cfg.pretrain, &cfg.vqvae, cfg.vqvae_seed)?.0)
                }
            };
            let outcome = run_pretrain(&cfg.pretrain, &utts, q, Some(&out))?;
            let summary = serde_json::json!({
                "steps": outcome.checkpoint.step,
                "final": outcome.metrics.last(),
                "checkpoint": out.join("final.ckpt"),
            });
            write_json(&out.join("summary.json"), &summary)?;
            print_json(&summary)?;
        }
        Command::Finetune { init, train, eval } => {
            let mut cfg: FinetuneRun = load_config(cfg_path)?;
            cfg.finetune.seed = seed.unwrap_or(cfg.finetune.seed);
            if init.is_some() {
                cfg.init = init;
            }
            cfg.train = cfg.train.with_path(train);
            cfg.eval = cfg.eval.with_path(eval);
            cfg.train.validate()?;
            cfg.eval.validate()?;
            cfg.finetune.head_schedule.validate()?;
            let out = out_dir(&cli.global, name);
            prepare_out(&out, &cfg)?;
            let init = match &cfg.init {
                Some(p) => FinetuneInit::Pretrained(Box::new(load_checkpoint(p, None)?)),
                None => FinetuneInit::Scratch,
            };
            let (train, eval) = (cfg.train.load()?, cfg.eval.load()?);
            let vocab = token_vocab(cfg.token_vocab_size, &[(&cfg.train, &train), (&cfg.eval, &eval)]);
            let (_, outcome) = run_finetune(&cfg.finetune, &init, &train, &eval, vocab)?;
            let mut hyps = String::new();
            for (u, h) in eval.iter().zip(&outcome.hypotheses) {
                hyps.push_str(&serde_json::to_string(&serde_json::json!({ "id": u.id, "tokens": h }))?);
                hyps.push('\n');
            }
            write_file(&out.join("hypotheses.jsonl"), hyps.as_bytes())?;
            let losses: String = std::iter::once("step,ctc_loss".to_string())
                .chain(outcome.losses.iter().enumerate().map(|(i, l)| format!("{},{l}", i + 1)))
                .map(|l| l + "\n")
                .collect();
            write_file(&out.join("losses.csv"), losses.as_bytes())?;
            let result = serde_json::json!({
                "ter": outcome.ter,
                "pretrained": outcome.pretrained,
                "encoder_lr_scale": outcome.encoder_lr_scale,
                "final_loss": outcome.losses.last(),
            });
            write_json(&out.join("result.json"), &result)?;
            print_json(&result)?;
        }
        Command::DirectAsr { quantizer, train, eval } => {
            let mut cfg: DirectAsrRun = load_config(cfg_path)?;
            cfg.probe.seed = seed.unwrap_or(cfg.probe.seed);
            if quantizer.is_some() {
                cfg.quantizer_path = quantizer;
            }
            cfg.train = cfg.train.with_path(train);
            cfg.eval = cfg.eval.with_path(eval);
            cfg.train.validate()?;
            cfg.eval.validate()?;
            cfg.probe.validate()?;
            let out = out_dir(&cli.global, name);
            prepare_out(&out, &cfg)?;
            let (train, eval) = (cfg.train.load()?, cfg.eval.load()?);
            let q = match &cfg.quantizer_path {
                Some(p) => load_quantizer(p)?,
                None => build_quantizer(
                    cfg.targets,
                    &cfg.quantizer,
                    &cfg.vqvae,
                    cfg.vqvae_seed,
                    cfg.probe.stack,
                    &train,
                )?,
            };
            let stats = compute_stats(train.iter().map(|u| &u.features))?;
            let vocab = token_vocab(cfg.token_vocab_size, &[(&cfg.train, &train), (&cfg.eval, &eval)]);
            let outcome = direct_asr_probe(&q, &train, &eval, &stats, vocab, &cfg.probe)?;
            let result = serde_json::json!({
                "ter": outcome.ter,
                "quantizer": q.kind_name(),
                "final_loss": outcome.losses.last(),
            });
            write_json(&out.join("result.json"), &result)?;
            print_json(&result)?;
        }
        Command::Scaling { unlabeled, train, eval } => {
            let mut cfg: ScalingRun = load_config(cfg_path)?;
            if let Some(s) = seed {
                cfg.scaling.pretrain.seed = s;
                cfg.scaling.finetune.seed = s;
            }
            cfg.unlabeled = cfg.unlabeled.with_path(unlabeled);
            cfg.train = cfg.train.with_path(train);
            cfg.eval = cfg.eval.with_path(eval);
            for src in [&cfg.unlabeled, &cfg.train, &cfg.eval] {
                src.validate()?;
            }
            cfg.scaling.validate()?;
            let out = out_dir(&cli.global, name);
            prepare_out(&out, &cfg)?;
            let (unl, train, eval) = (cfg.unlabeled.load()?, cfg.train.load()?, cfg.eval.load()?);
            let vocab = token_vocab(cfg.token_vocab_size, &[(&cfg.train, &train), (&cfg.eval, &eval)]);
            let rows = data_scaling_experiment(&cfg.scaling, &unl, &train, &eval, vocab)?;
            write_file(&out.join("scaling.csv"), scaling_csv(&rows).as_bytes())?;
            print_json(&rows)?;
        }
        Command::Latency { base, comp } => {
            if let Some(out) = &cli.global.out {
                prepare_out(out, &serde_json::json!({ "base": base, "comp": comp }))?;
            }
            let report = compare_hypotheses(&parse_hypotheses(&base)?, &parse_hypotheses(&comp)?)?;
            if let Some(out) = &cli.global.out {
                write_json(&out.join("latency.json"), &report)?;
            }
            print_json(&report)?;
        }
        Command::GradCheck => {
            let mut cfg: GradCheckRun = load_config(cfg_path)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.encoder.validate()?;
            if cfg.frames == 0 || !(cfg.eps > 0.0) {
                return Err(Error::Config("frames and eps must be positive".into()).into());
            }
            let out = out_dir(&cli.global, name);
            prepare_out(&out, &cfg)?;
            let report = composed_loss_grad_check(&cfg.encoder, cfg.frames, cfg.seed, cfg.eps)?;
            write_json(&out.join("grad_check.json"), &report)?;
            print_json(&report)?;
            if report.max_rel_error >= cfg.tolerance {
                return Err(Error::Precondition(format!(
                    "max relative gradient error {:e} exceeds {:e}",
                    report.max_rel_error, cfg.tolerance
                )))
                .context("gradient check failed");
            }
        }
    }
    Ok(())
}

/// Exit status by error category; clap itself exits with 2 on usage errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.category() {
                ErrorCategory::Config => 3,
                ErrorCategory::Io => 4,
                ErrorCategory::Format => 5,
                ErrorCategory::Numeric => 6,
                ErrorCategory::UndefinedMetric => 7,
                ErrorCategory::Precondition => 8,
                ErrorCategory::InvalidInput => 9,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
