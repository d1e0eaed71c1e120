//! Masked-prediction pre-training: clean stacked frames are quantized into
//! targets, raw frames are span-masked, and the encoder predicts the targets
//! of masked positions.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint, QuantizerInfo, CHECKPOINT_VERSION};
use super::metrics::{CsvLog, MetricsRow, METRICS_HEADER, TIMING_HEADER};
use crate::data::{compute_stats, normalize, stack_frames, CorpusStats, FeatureSequence, Utterance};
use crate::encoder::{
    bind_params, forward_batch, forward_tape, init_encoder, masked_ce_loss, ContextMode, EncoderConfig, EncoderParams, MaskedLoss,
    ParamTree,
};
use crate::error::{config_err, Error, Result};
use crate::masking::{apply_mask, reduce_mask, sample_mask, DEFAULT_NOISE_STD, DEFAULT_SPAN_FRAMES, DEFAULT_START_PROB};
use crate::numerics::{adam_step, grad_check, transformer_lr, GradCheckReport, AdamHyper, AdamState, Real, ScheduleConfig, Tape, Tensor};
use crate::quantizer::{
    save_quantizer, utilization, Quantizer, RandomProjectionQuantizer, RpqSpec, SequenceLabeler, VqVariant,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub start_prob: f64,
    /// Span length in raw (unstacked) frames.
    pub span_frames: usize,
    pub noise_std: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            start_prob: DEFAULT_START_PROB,
            span_frames: DEFAULT_SPAN_FRAMES,
            noise_std: DEFAULT_NOISE_STD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerConfig {
    pub code_dim: usize,
    pub codebook_size: usize,
    pub seed: u64,
    pub l2_normalize: bool,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            code_dim: 16,
            codebook_size: 256,
            seed: 0,
            l2_normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub quantizer: QuantizerConfig,
    pub mask: MaskConfig,
    pub stack: usize,
    pub encoder: EncoderConfig,
    pub schedule: ScheduleConfig,
    /// Utterances per step.
    pub batch_size: usize,
    pub steps: usize,
    /// Leading share of the corpus used for training, in `(0, 1]`.
    pub data_fraction: f64,
    pub seed: u64,
    /// Metrics rows between flushes to disk.
    pub flush_every: usize,
    /// Steps between intermediate checkpoints; `None` writes only the final one.
    pub checkpoint_every: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            quantizer: QuantizerConfig::default(),
            mask: MaskConfig::default(),
            stack: 4,
            encoder: EncoderConfig {
                input_dim: 80,
                vocab_size: 256,
                ..EncoderConfig::default()
            },
            schedule: ScheduleConfig {
                peak_lr: 2e-3,
                warmup_steps: 300,
            },
            batch_size: 32,
            steps: 3000,
            data_fraction: 1.0,
            seed: 0,
            flush_every: 50,
            checkpoint_every: None,
        }
    }
}

impl PretrainConfig {
    /// Checks internal consistency and, given the raw feature dim, the
    /// encoder input width.
    pub fn validate(&self, feature_dim: Option<usize>) -> Result<()> {
        self.encoder.validate()?;
        self.schedule.validate()?;
        if self.stack < 1 || self.batch_size < 1 {
            return Err(config_err!("stack and batch_size must be at least 1"));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(config_err!("data_fraction must lie in (0, 1], got {}", self.data_fraction));
        }
        if self.mask.span_frames < 1 || !(0.0..=1.0).contains(&self.mask.start_prob) || !(self.mask.noise_std >= 0.0) {
            return Err(config_err!("invalid mask config {:?}", self.mask));
        }
        if self.encoder.vocab_size != self.quantizer.codebook_size {
            return Err(config_err!(
                "encoder vocab_size {} must equal quantizer codebook_size {}",
                self.encoder.vocab_size,
                self.quantizer.codebook_size
            ));
        }
        if let Some(d) = feature_dim {
            if self.encoder.input_dim != self.stack * d {
                return Err(config_err!(
                    "encoder input_dim {} must equal stack {} x feature dim {d}",
                    self.encoder.input_dim,
                    self.stack
                ));
            }
        }
        Ok(())
    }

    pub fn rpq_spec(&self, feature_dim: usize) -> RpqSpec {
        RpqSpec {
            input_dim: self.stack * feature_dim,
            code_dim: self.quantizer.code_dim,
            codebook_size: self.quantizer.codebook_size,
            seed: self.quantizer.seed,
            l2_normalize: self.quantizer.l2_normalize,
        }
    }
}

/// Leading `ceil(fraction * len)` items, at least one.
pub fn data_subset<T>(items: &[T], fraction: f64) -> &[T] {
    let n = ((items.len() as f64 * fraction).ceil() as usize).clamp(1.min(items.len()), items.len());
    &items[..n]
}

pub fn normalize_all(utts: &[Utterance], stats: &CorpusStats) -> Result<Vec<FeatureSequence>> {
    utts.iter().map(|u| normalize(&u.features, stats)).collect()
}

/// Normalized utterances with their clean-signal targets precomputed.
pub struct PretrainData {
    pub sequences: Vec<FeatureSequence>,
    pub targets: Vec<Vec<Option<usize>>>,
    pub stack: usize,
}

impl PretrainData {
    /// Targets always come from the unmasked, normalized, stacked signal.
    pub fn new(sequences: Vec<FeatureSequence>, labeler: &dyn SequenceLabeler, stack: usize) -> Result<Self> {
        let targets = sequences
            .iter()
            .map(|s| labeler.label_sequence(&stack_frames(s, stack)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sequences,
            targets,
            stack,
        })
    }
}

/// One masked utterance ready for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    /// Stacked masked frames `[T', k d]`.
    pub input: Tensor<f32>,
    /// Clean-signal targets; `0` where unlabeled (never scored there).
    pub labels: Vec<usize>,
    /// Scored positions: masked and labeled.
    pub label_mask: Vec<bool>,
    /// Every labeled position, used for utilization.
    pub labeled: Vec<bool>,
}

pub fn make_batch_item(
    seq: &FeatureSequence,
    targets: &[Option<usize>],
    stack: usize,
    mask: &MaskConfig,
    seed: u64,
) -> Result<BatchItem> {
    let plan = sample_mask(seq.len(), mask.start_prob, mask.span_frames, rng::derive(seed, 1))?;
    let masked = apply_mask(seq, &plan, mask.noise_std, rng::derive(seed, 2))?;
    let input = stack_frames(&masked.masked, stack)?;
    let reduced = reduce_mask(&plan.mask, stack)?;
    if reduced.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} stacked frames",
            targets.len(),
            reduced.len()
        )));
    }
    Ok(BatchItem {
        input: input.frames().clone(),
        labels: targets.iter().map(|t| t.unwrap_or(0)).collect(),
        label_mask: reduced.iter().zip(targets).map(|(&m, t)| m && t.is_some()).collect(),
        labeled: targets.iter().map(Option::is_some).collect(),
    })
}

/// Masked-prediction loss of a batch and its gradients in parameter order.
pub fn composed_loss<F: Real>(
    params: &EncoderParams<F>,
    inputs: &[&Tensor<F>],
    labels: &[usize],
    label_mask: &[bool],
    mode: ContextMode,
) -> Result<(MaskedLoss<F>, Vec<Tensor<F>>)> {
    let mut tape = Tape::new();
    let net = bind_params(&mut tape, params);
    let (logits, _) = forward_tape(&mut tape, &net, &params.config, inputs, mode)?;
    let ce = masked_ce_loss(tape.value(logits), labels, label_mask)?;
    let loss = tape.scalar_with_partials(ce.loss, vec![(logits, ce.grad.clone())]);
    let mut grads = tape.backward(loss);
    let g = crate::encoder::layers::collect_grads(&mut grads, &net, &params.net);
    Ok((ce, g))
}

/// Central-difference check of the masked-prediction loss gradient for a
/// freshly initialized encoder, in 64-bit precision, on one random
/// utterance of `frames` frames with roughly half the positions masked.
pub fn composed_loss_grad_check(config: &EncoderConfig, frames: usize, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let params: EncoderParams<f64> = init_encoder(config)?;
    let mut r = rng::rng(seed, "grad-check");
    let input: Tensor<f64> = rng::standard_normal(&mut r, &[frames, config.input_dim]);
    let labels: Vec<usize> = (0..frames).map(|_| r.random_range(0..config.vocab_size)).collect();
    let mut mask: Vec<bool> = (0..frames).map(|_| r.random_bool(0.5)).collect();
    if let Some(first) = mask.first_mut() {
        *first = true;
    }
    let flat: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
    grad_check(
        |ts| {
            let mut it = ts.iter();
            let net = params.net.map_ref(&mut |_| it.next().expect("one tensor per slot").clone());
            let p = EncoderParams {
                config: params.config.clone(),
                net,
            };
            let (ce, g) = composed_loss(&p, &[&input], &labels, &mask, config.context_mode)?;
            Ok((ce.loss, g))
        },
        &flat,
        eps,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaskedEval {
    /// Mean cross-entropy over masked, labeled positions.
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub masked_positions: usize,
}

/// Masked-prediction loss and top-1 accuracy of `params` over every
/// utterance of `data`, with masks drawn from `seed`.
pub fn evaluate_masked(params: &EncoderParams<f32>, data: &PretrainData, mask: &MaskConfig, seed: u64) -> Result<MaskedEval> {
    let mut loss = 0.0;
    let mut correct = 0.0;
    let mut positions = 0;
    let items = data
        .sequences
        .iter()
        .zip(&data.targets)
        .enumerate()
        .map(|(i, (s, t))| make_batch_item(s, t, data.stack, mask, rng::derive(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    for chunk in items.chunks(32) {
        let inputs: Vec<&Tensor<f32>> = chunk.iter().map(|b| &b.input).collect();
        let logits = forward_batch(params, &inputs, params.config.context_mode)?;
        for (item, l) in chunk.iter().zip(&logits) {
            let ce = masked_ce_loss(l, &item.labels, &item.label_mask)?;
            let n = ce.masked_positions as f64;
            loss += ce.loss as f64 * n;
            correct += ce.accuracy.unwrap_or(0.0) * n;
            positions += ce.masked_positions;
        }
    }
    Ok(MaskedEval {
        loss: if positions > 0 { loss / positions as f64 } else { 0.0 },
        accuracy: (positions > 0).then(|| correct / positions as f64),
        masked_positions: positions,
    })
}

pub struct PretrainState {
    pub params: EncoderParams<f32>,
    pub adam: AdamState<f32>,
    pub step: usize,
    pub schedule: ScheduleConfig,
    pub codebook_size: usize,
}

impl PretrainState {
    pub fn new(cfg: &PretrainConfig) -> Result<Self> {
        let params = init_encoder(&cfg.encoder)?;
        let adam = AdamState::new(params.tensors(), AdamHyper::default());
        Ok(Self {
            params,
            adam,
            step: 0,
            schedule: cfg.schedule,
            codebook_size: cfg.quantizer.codebook_size,
        })
    }
}

/// One optimizer step. A batch without masked positions has zero loss and
/// leaves the parameters and optimizer moments untouched.
pub fn pretrain_step(state: &mut PretrainState, batch: &[BatchItem]) -> Result<MetricsRow> {
    let step = state.step + 1;
    let lr = transformer_lr(step, &state.schedule)?;
    let inputs: Vec<&Tensor<f32>> = batch.iter().map(|b| &b.input).collect();
    let labels: Vec<usize> = batch.iter().flat_map(|b| b.labels.iter().copied()).collect();
    let mask: Vec<bool> = batch.iter().flat_map(|b| b.label_mask.iter().copied()).collect();
    let mode = state.params.config.context_mode;
    let (ce, grads) = composed_loss(&state.params, &inputs, &labels, &mask, mode)?;
    if !ce.loss.is_finite() {
        return Err(Error::Diverged {
            step,
            what: "pre-training loss".into(),
        });
    }
    if ce.masked_positions > 0 {
        let grefs: Vec<&Tensor<f32>> = grads.iter().collect();
        let mut slots = state.params.net.slots_mut();
        adam_step(&mut slots, &grefs, &mut state.adam, lr).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged {
                step,
                what: "gradient".into(),
            },
            e => e,
        })?;
    }
    state.step = step;
    let used = batch
        .iter()
        .flat_map(|b| b.labels.iter().zip(&b.labeled).filter(|(_, &l)| l).map(|(&x, _)| x));
    let util = utilization(used, state.codebook_size)?;
    Ok(MetricsRow {
        step,
        loss: ce.loss as f64,
        masked_accuracy: ce.accuracy,
        masked_positions: ce.masked_positions,
        codes_used_fraction: util.codes_used_fraction,
        code_entropy: util.normalized_entropy,
        learning_rate: lr,
    })
}

/// Batch of `batch_size` items for `step`, fully determined by the run seed.
pub fn sample_batch(data: &PretrainData, cfg: &PretrainConfig, step: usize) -> Result<Vec<BatchItem>> {
    let mut pick = rng::rng(rng::derive(cfg.seed, step as u64), "pretrain-batch");
    (0..cfg.batch_size)
        .map(|i| {
            let u = pick.random_range(0..data.sequences.len());
            let seed = rng::derive(rng::derive(cfg.seed, step as u64), i as u64);
            make_batch_item(&data.sequences[u], &data.targets[u], data.stack, &cfg.mask, seed)
        })
        .collect()
}

pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
    pub stats: CorpusStats,
    pub quantizer: Quantizer,
}

fn quantizer_info(q: &Quantizer) -> QuantizerInfo {
    match q {
        Quantizer::RandomProjection(r) => QuantizerInfo::RandomProjection { spec: *r.spec() },
        Quantizer::VqVae(v) => QuantizerInfo::VqVae {
            variant: match v.variant() {
                VqVariant::Projection => "projection".into(),
                VqVariant::Transformer => "transformer".into(),
            },
            codebook_size: v.codebook_size(),
            seed: v.seed(),
        },
    }
}

/// Runs pre-training on `corpus`. Targets come from `quantizer` when given,
/// otherwise from a random-projection quantizer built from the config.
/// With `out` set, writes `metrics.csv`, `timing.csv`, checkpoints,
/// `quantizer.bin` and `stats.json` there.
pub fn run_pretrain(
    cfg: &PretrainConfig,
    corpus: &[Utterance],
    quantizer: Option<Quantizer>,
    out: Option<&Path>,
) -> Result<PretrainOutcome> {
    let feature_dim = corpus
        .first()
        .ok_or_else(|| Error::InvalidInput("pre-training corpus is empty".into()))?
        .features
        .dim();
    cfg.validate(Some(feature_dim))?;
    let subset = data_subset(corpus, cfg.data_fraction);
    let stats = compute_stats(subset.iter().map(|u| &u.features))?;
    let quantizer = match quantizer {
        Some(q) => q,
        None => Quantizer::RandomProjection(RandomProjectionQuantizer::new(cfg.rpq_spec(feature_dim))?),
    };
    if quantizer.vocab_size() != cfg.encoder.vocab_size || quantizer.input_dim() != cfg.encoder.input_dim {
        return Err(config_err!(
            "quantizer (n={}, d={}) does not fit encoder (vocab={}, input={})",
            quantizer.vocab_size(),
            quantizer.input_dim(),
            cfg.encoder.vocab_size,
            cfg.encoder.input_dim
        ));
    }
    let data = PretrainData::new(normalize_all(subset, &stats)?, &quantizer, cfg.stack)?;
    let mut state = PretrainState::new(cfg)?;

    let mut logs = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
            save_quantizer(&quantizer, dir.join("quantizer.bin"), false)?;
            let stats_path = dir.join("stats.json");
            std::fs::write(&stats_path, serde_json::to_vec_pretty(&stats)?).map_err(|e| Error::io(&stats_path, e))?;
            Some((
                CsvLog::create(dir.join("metrics.csv"), METRICS_HEADER, cfg.flush_every)?,
                CsvLog::create(dir.join("timing.csv"), TIMING_HEADER, cfg.flush_every)?,
            ))
        }
        None => None,
    };
    let info = quantizer_info(&quantizer);
    let snapshot = |state: &PretrainState, last: Option<&MetricsRow>| Checkpoint {
        version: CHECKPOINT_VERSION,
        step: state.step,
        params: state.params.clone(),
        quantizer: info.clone(),
        stats: Some(stats.clone()),
        stack: cfg.stack,
        metrics: last.cloned(),
    };

    let started = Instant::now();
    let mut metrics = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch = sample_batch(&data, cfg, step)?;
        let row = pretrain_step(&mut state, &batch)?;
        if let Some((m, t)) = logs.as_mut() {
            m.line(&row.csv_line())?;
            t.line(&format!("{step},{:.3}", started.elapsed().as_secs_f64()))?;
        }
        if step % 100 == 0 {
            log::info!(
                "pretrain step {step}: loss {:.4} acc {:?} lr {:.2e}",
                row.loss,
                row.masked_accuracy,
                row.learning_rate
            );
        }
        metrics.push(row);
        if let (Some(dir), Some(every)) = (out, cfg.checkpoint_every) {
            if every > 0 && step % every == 0 && step != cfg.steps {
                save_checkpoint(checkpoint_path(dir, step), &snapshot(&state, metrics.last()))?;
            }
        }
    }
    let checkpoint = snapshot(&state, metrics.last());
    if let Some(dir) = out {
        if let Some((m, t)) = logs.as_mut() {
            m.flush()?;
            t.flush()?;
        }
        save_checkpoint(dir.join("final.ckpt"), &checkpoint)?;
    }
    Ok(PretrainOutcome {
        checkpoint,
        metrics,
        stats,
        quantizer,
    })
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step:06}.ckpt"))
}
