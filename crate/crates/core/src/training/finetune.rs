//! Supervised CTC fine-tuning: the encoder body (pre-trained or fresh) gets a
//! new projection layer and a CTC output layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::ctc::{ctc_loss, greedy_ctc_decode, token_error_rate};
use super::pretrain::normalize_all;
use crate::data::{compute_stats, stack_frames, CorpusStats, Utterance};
use crate::encoder::layers::{self, bind, bind_frozen, init_linear, Encoder, Linear, ParamTree};
use crate::encoder::{check_inputs, init_body, split_rows, ContextMode, EncoderConfig};
use crate::error::{config_err, Error, Result};
use crate::numerics::{adam_step, transformer_lr, AdamHyper, AdamState, ScheduleConfig, Tape, Tensor, Var};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub stack: usize,
    /// Body shape for scratch runs; a pre-trained body brings its own.
    pub encoder: EncoderConfig,
    pub head_schedule: ScheduleConfig,
    /// Encoder peak rate as a fraction of the head's. `None` picks 0.3 for a
    /// pre-trained body and 1.0 from scratch.
    pub encoder_lr_scale: Option<f64>,
    /// Encoder warmup as a multiple of the head warmup (pre-trained only).
    pub encoder_warmup_ratio: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            stack: 4,
            encoder: EncoderConfig {
                input_dim: 80,
                ..EncoderConfig::default()
            },
            head_schedule: ScheduleConfig {
                peak_lr: 1e-3,
                warmup_steps: 150,
            },
            encoder_lr_scale: None,
            encoder_warmup_ratio: 10.0 / 3.0,
            batch_size: 32,
            steps: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FinetuneInit {
    Scratch,
    Pretrained(Box<Checkpoint>),
}

/// Encoder body plus the fine-tuning projection and CTC output layers.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcNet<T> {
    pub body: Encoder<T>,
    pub projection: Linear<T>,
    pub output: Linear<T>,
}

impl<T> ParamTree<T> for CtcNet<T> {
    type Mapped<U> = CtcNet<U>;
    fn map_ref<U>(&self, f: &mut dyn FnMut(&T) -> U) -> CtcNet<U> {
        CtcNet {
            body: self.body.map_ref(f),
            projection: self.projection.map_ref(f),
            output: self.output.map_ref(f),
        }
    }
    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a T)) {
        self.body.for_each(f);
        self.projection.for_each(f);
        self.output.for_each(f);
    }
    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
        self.body.for_each_mut(f);
        self.projection.for_each_mut(f);
        self.output.for_each_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneModel {
    pub config: EncoderConfig,
    pub net: CtcNet<Tensor<f32>>,
    pub stats: CorpusStats,
    pub stack: usize,
    /// Task tokens; the blank is index `token_vocab_size`.
    pub token_vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinetuneOutcome {
    pub ter: f64,
    /// Mean CTC loss of each step.
    pub losses: Vec<f64>,
    pub hypotheses: Vec<Vec<usize>>,
    pub pretrained: bool,
    pub encoder_lr_scale: f64,
}

/// Mean CTC loss over the batch; infeasible utterances are left out.
pub(crate) fn ctc_batch_node(
    tape: &mut Tape<f32>,
    logits: Var,
    segments: &[(usize, usize)],
    targets: &[&[usize]],
) -> Result<(Var, f64)> {
    let value = tape.value(logits);
    let width = value.cols();
    let mut grad = vec![0.0f32; value.len()];
    let mut total = 0.0f64;
    let mut used = 0usize;
    let mut per: Vec<(usize, usize, Tensor<f32>)> = Vec::with_capacity(segments.len());
    for (&(start, len), target) in segments.iter().zip(targets) {
        let rows = Tensor::from_parts(vec![len, width], value.data()[start * width..(start + len) * width].to_vec());
        let l = ctc_loss(&rows, target)?;
        if l.feasible {
            total += l.loss as f64;
            used += 1;
            per.push((start, len, l.grad));
        }
    }
    if used > 0 {
        let scale = 1.0 / used as f32;
        for (start, len, g) in per {
            for (dst, &src) in grad[start * width..(start + len) * width].iter_mut().zip(g.data()) {
                *dst = src * scale;
            }
        }
    }
    let mean = if used > 0 { total / used as f64 } else { 0.0 };
    let node = tape.scalar_with_partials(
        mean as f32,
        vec![(logits, Tensor::from_parts(value.shape().to_vec(), grad))],
    );
    Ok((node, mean))
}

fn ctc_forward(
    tape: &mut Tape<f32>,
    net: &CtcNet<Var>,
    cfg: &EncoderConfig,
    inputs: &[&Tensor<f32>],
    mode: ContextMode,
) -> Result<(Var, Vec<(usize, usize)>)> {
    check_inputs(inputs, cfg.input_dim)?;
    let owned: Vec<Tensor<f32>> = inputs.iter().map(|t| (*t).clone()).collect();
    let (x, segments) = layers::concat_rows(&owned);
    let x = tape.constant(x);
    let h = layers::encoder_forward(tape, &net.body, x, cfg.num_heads, &segments, mode);
    let h = layers::linear(tape, h, &net.projection);
    let logits = layers::linear(tape, h, &net.output);
    Ok((logits, segments))
}

impl FinetuneModel {
    /// Frame logits `[T', V + 1]` for already normalized, stacked inputs.
    pub fn logits(&self, inputs: &[&Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        let mut tape = Tape::new();
        let net = bind_frozen(&mut tape, &self.net);
        let (logits, segments) = ctc_forward(&mut tape, &net, &self.config, inputs, self.config.context_mode)?;
        Ok(split_rows(tape.value(logits), &segments))
    }

    pub fn prepare(&self, utts: &[Utterance]) -> Result<Vec<Tensor<f32>>> {
        prepare_inputs(utts, &self.stats, self.stack)
    }

    /// Greedy transcripts of raw utterances.
    pub fn transcribe(&self, utts: &[Utterance]) -> Result<Vec<Vec<usize>>> {
        let inputs = self.prepare(utts)?;
        let mut out = Vec::with_capacity(utts.len());
        for chunk in inputs.chunks(32) {
            let refs: Vec<&Tensor<f32>> = chunk.iter().collect();
            out.extend(self.logits(&refs)?.iter().map(greedy_ctc_decode));
        }
        Ok(out)
    }
}

pub(crate) fn prepare_inputs(utts: &[Utterance], stats: &CorpusStats, stack: usize) -> Result<Vec<Tensor<f32>>> {
    normalize_all(utts, stats)?
        .iter()
        .map(|s| Ok(stack_frames(s, stack)?.frames().clone()))
        .collect()
}

/// Fine-tunes with CTC on `train` and reports token error rate on `eval`.
pub fn run_finetune(
    cfg: &FinetuneConfig,
    init: &FinetuneInit,
    train: &[Utterance],
    eval: &[Utterance],
    token_vocab_size: usize,
) -> Result<(FinetuneModel, FinetuneOutcome)> {
    cfg.head_schedule.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::InvalidInput("fine-tuning needs train and eval utterances".into()));
    }
    if cfg.batch_size < 1 || token_vocab_size < 1 {
        return Err(config_err!("batch_size and token vocabulary must be at least 1"));
    }
    let feature_dim = train[0].features.dim();
    let (config, body, stats, pretrained) = match init {
        FinetuneInit::Scratch => {
            cfg.encoder.validate()?;
            (
                cfg.encoder.clone(),
                init_body(&cfg.encoder)?,
                compute_stats(train.iter().map(|u| &u.features))?,
                false,
            )
        }
        FinetuneInit::Pretrained(ckpt) => {
            let stats = ckpt
                .stats
                .clone()
                .ok_or_else(|| config_err!("checkpoint carries no normalization statistics"))?;
            if ckpt.stack != cfg.stack || stats.mean.len() != feature_dim {
                return Err(config_err!(
                    "checkpoint expects stack {} over {}-dim features, fine-tuning has stack {} over {feature_dim}",
                    ckpt.stack,
                    stats.mean.len(),
                    cfg.stack
                ));
            }
            (ckpt.params.config.clone(), ckpt.params.net.body.clone(), stats, true)
        }
    };
    if config.input_dim != cfg.stack * feature_dim {
        return Err(config_err!(
            "encoder input_dim {} does not match stack {} x feature dim {feature_dim}",
            config.input_dim,
            cfg.stack
        ));
    }
    let scale = cfg.encoder_lr_scale.unwrap_or(if pretrained { 0.3 } else { 1.0 });
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(config_err!("encoder_lr_scale must be positive"));
    }
    let encoder_schedule = ScheduleConfig {
        peak_lr: cfg.head_schedule.peak_lr * scale,
        warmup_steps: if pretrained {
            ((cfg.head_schedule.warmup_steps as f64 * cfg.encoder_warmup_ratio).round() as usize).max(1)
        } else {
            cfg.head_schedule.warmup_steps
        },
    };

    let d = config.d_model;
    let mut head_rng = rng::rng(cfg.seed, "finetune-head");
    let mut net = CtcNet {
        body,
        projection: init_linear(&mut head_rng, d, d),
        output: init_linear(&mut head_rng, d, token_vocab_size + 1),
    };
    let inputs = prepare_inputs(train, &stats, cfg.stack)?;
    let body_slots = net.body.slots().len();
    let mut body_adam = AdamState::new(net.body.slots(), AdamHyper::default());
    let mut head_adam = AdamState::new(
        net.projection.slots().into_iter().chain(net.output.slots()),
        AdamHyper::default(),
    );

    let mut losses = Vec::with_capacity(cfg.steps);
    let mut pick = rng::rng(cfg.seed, "finetune-batches");
    for step in 1..=cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| pick.random_range(0..train.len())).collect();
        let batch: Vec<&Tensor<f32>> = idx.iter().map(|&i| &inputs[i]).collect();
        let targets: Vec<&[usize]> = idx.iter().map(|&i| train[i].transcript.as_slice()).collect();
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &net);
        let (logits, segments) = ctc_forward(&mut tape, &vars, &config, &batch, config.context_mode)?;
        let (loss, mean) = ctc_batch_node(&mut tape, logits, &segments, &targets)?;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "ctc loss".into(),
            });
        }
        losses.push(mean);
        let mut grads = tape.backward(loss);
        let g = layers::collect_grads(&mut grads, &vars, &net);
        let (g_body, g_head) = g.split_at(body_slots);
        let mut slots = net.slots_mut();
        let head_slots = slots.split_off(body_slots);
        let mut body_refs = slots;
        let mut head_refs = head_slots;
        let lr_body = transformer_lr(step, &encoder_schedule)?;
        let lr_head = transformer_lr(step, &cfg.head_schedule)?;
        adam_step(&mut body_refs, &g_body.iter().collect::<Vec<_>>(), &mut body_adam, lr_body)?;
        adam_step(&mut head_refs, &g_head.iter().collect::<Vec<_>>(), &mut head_adam, lr_head)?;
        if step % 100 == 0 {
            log::info!("finetune step {step}: ctc {mean:.4}");
        }
    }

    let model = FinetuneModel {
        config,
        net,
        stats,
        stack: cfg.stack,
        token_vocab_size,
    };
    let hypotheses = model.transcribe(eval)?;
    let refs: Vec<Vec<usize>> = eval.iter().map(|u| u.transcript.clone()).collect();
    let ter = token_error_rate(&hypotheses, &refs)?;
    Ok((
        model,
        FinetuneOutcome {
            ter,
            losses,
            hypotheses,
            pretrained,
            encoder_lr_scale: scale,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SyntheticTaskSpec};
    use crate::training::pretrain::{run_pretrain, PretrainConfig, QuantizerConfig};

    fn small_encoder() -> EncoderConfig {
        EncoderConfig {
            num_layers: 1,
            d_model: 32,
            num_heads: 2,
            ffn_dim: 64,
            input_dim: 80,
            vocab_size: 32,
            context_mode: ContextMode::full(),
            seed: 1,
        }
    }

    #[test]
    fn scratch_learns_noiseless_task() {
        let spec = SyntheticTaskSpec {
            emission_noise_std: 0.0,
            ..SyntheticTaskSpec::default()
        };
        let train = synth_corpus(&spec, 64, 1).unwrap();
        let eval = synth_corpus(&spec, 16, 2).unwrap();
        let cfg = FinetuneConfig {
            encoder: small_encoder(),
            batch_size: 8,
            steps: 300,
            ..FinetuneConfig::default()
        };
        let (_, out) = run_finetune(&cfg, &FinetuneInit::Scratch, &train, &eval, 12).unwrap();
        assert!(out.ter < 0.5, "ter {}", out.ter);
        assert!(out.losses.last().unwrap() < &out.losses[0]);
    }

    #[test]
    fn heads_are_fresh_either_way() {
        let spec = SyntheticTaskSpec::default();
        let train = synth_corpus(&spec, 16, 1).unwrap();
        let pre_cfg = PretrainConfig {
            quantizer: QuantizerConfig {
                codebook_size: 32,
                ..QuantizerConfig::default()
            },
            encoder: small_encoder(),
            batch_size: 4,
            steps: 2,
            ..PretrainConfig::default()
        };
        let pre = run_pretrain(&pre_cfg, &train, None, None).unwrap();
        let cfg = FinetuneConfig {
            encoder: small_encoder(),
            batch_size: 4,
            steps: 1,
            ..FinetuneConfig::default()
        };
        let (_, scratch) = run_finetune(&cfg, &FinetuneInit::Scratch, &train, &train, 12).unwrap();
        let (m, pre_out) = run_finetune(
            &cfg,
            &FinetuneInit::Pretrained(Box::new(pre.checkpoint.clone())),
            &train,
            &train,
            12,
        )
        .unwrap();
        assert!(pre_out.pretrained && pre_out.encoder_lr_scale == 0.3);
        // Both start from an untrained head over a near-random body.
        assert!((scratch.losses[0] - pre_out.losses[0]).abs() < 0.25 * scratch.losses[0]);
        assert_eq!(m.stats, pre.stats);
    }

    #[test]
    fn incompatible_checkpoint() {
        let spec = SyntheticTaskSpec::default();
        let train = synth_corpus(&spec, 8, 1).unwrap();
        let pre_cfg = PretrainConfig {
            quantizer: QuantizerConfig {
                codebook_size: 32,
                ..QuantizerConfig::default()
            },
            encoder: small_encoder(),
            batch_size: 2,
            steps: 0,
            ..PretrainConfig::default()
        };
        let pre = run_pretrain(&pre_cfg, &train, None, None).unwrap();
        let cfg = FinetuneConfig {
            stack: 2,
            steps: 1,
            ..FinetuneConfig::default()
        };
        let init = FinetuneInit::Pretrained(Box::new(pre.checkpoint));
        assert!(matches!(run_finetune(&cfg, &init, &train, &train, 12), Err(Error::Config(_))));
    }
}
