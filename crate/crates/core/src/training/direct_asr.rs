//! Quantizer quality probe: a small recognizer is trained on the quantizer's
//! label ids instead of features, so its error rate reflects how much of the
//! transcript survives quantization.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ctc::{greedy_ctc_decode, token_error_rate};
use super::finetune::ctc_batch_node;
use super::pretrain::normalize_all;
use crate::data::{stack_frames, CorpusStats, Utterance};
use crate::encoder::layers::{self, bind, bind_frozen, init_linear, init_trunk, Linear, ParamTree, Trunk};
use crate::encoder::ContextMode;
use crate::error::{config_err, Error, Result};
use crate::numerics::{adam_step, transformer_lr, AdamHyper, AdamState, ScheduleConfig, Tape, Tensor, Var};
use crate::quantizer::SequenceLabeler;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectAsrConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub stack: usize,
    pub schedule: ScheduleConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Pair each training label sequence with another utterance's
    /// transcript, destroying the signal.
    pub shuffle_pairs: bool,
}

impl Default for DirectAsrConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            d_model: 64,
            num_heads: 4,
            ffn_dim: 128,
            stack: 4,
            schedule: ScheduleConfig {
                peak_lr: 1e-3,
                warmup_steps: 150,
            },
            batch_size: 16,
            steps: 1000,
            seed: 0,
            shuffle_pairs: false,
        }
    }
}

impl DirectAsrConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.num_layers < 1 || self.d_model < 1 || self.ffn_dim < 1 || self.stack < 1 || self.batch_size < 1 {
            return Err(config_err!("probe sizes must all be at least 1"));
        }
        if self.num_heads < 1 || self.d_model % self.num_heads != 0 {
            return Err(config_err!(
                "num_heads {} must divide d_model {}",
                self.num_heads,
                self.d_model
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeNet<T> {
    /// One row per label id plus a final row for unlabeled frames.
    pub embedding: T,
    pub trunk: Trunk<T>,
    pub output: Linear<T>,
}

impl<T> ParamTree<T> for ProbeNet<T> {
    type Mapped<U> = ProbeNet<U>;
    fn map_ref<U>(&self, f: &mut dyn FnMut(&T) -> U) -> ProbeNet<U> {
        ProbeNet {
            embedding: f(&self.embedding),
            trunk: self.trunk.map_ref(f),
            output: self.output.map_ref(f),
        }
    }
    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a T)) {
        f(&self.embedding);
        self.trunk.for_each(f);
        self.output.for_each(f);
    }
    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
        f(&mut self.embedding);
        self.trunk.for_each_mut(f);
        self.output.for_each_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub ter: f64,
    pub losses: Vec<f64>,
    pub hypotheses: Vec<Vec<usize>>,
}

/// Label ids of every utterance, with unlabeled frames mapped to `vocab`.
fn label_ids(labeler: &dyn SequenceLabeler, utts: &[Utterance], stats: &CorpusStats, stack: usize) -> Result<Vec<Vec<usize>>> {
    let unknown = labeler.vocab_size();
    normalize_all(utts, stats)?
        .iter()
        .map(|s| {
            let labels = labeler.label_sequence(&stack_frames(s, stack)?)?;
            Ok(labels.into_iter().map(|l| l.unwrap_or(unknown)).collect())
        })
        .collect()
}

fn probe_forward(tape: &mut Tape<f32>, net: &ProbeNet<Var>, heads: usize, ids: &[&[usize]]) -> (Var, Vec<(usize, usize)>) {
    let mut flat = Vec::with_capacity(ids.iter().map(|s| s.len()).sum());
    let mut segments = Vec::with_capacity(ids.len());
    for s in ids {
        segments.push((flat.len(), s.len()));
        flat.extend_from_slice(s);
    }
    let h = tape.embedding(net.embedding, &flat);
    let d = tape.value(h).cols();
    let pe = tape.constant(layers::positional_encoding(&segments, d));
    let h = tape.add(h, pe);
    let h = layers::trunk_forward(tape, &net.trunk, h, heads, &segments, ContextMode::full());
    (layers::linear(tape, h, &net.output), segments)
}

/// Trains the probe on `train` labels and reports TER on `eval`. Features
/// are normalized with `stats` before quantization.
pub fn direct_asr_probe(
    labeler: &dyn SequenceLabeler,
    train: &[Utterance],
    eval: &[Utterance],
    stats: &CorpusStats,
    token_vocab_size: usize,
    cfg: &DirectAsrConfig,
) -> Result<ProbeOutcome> {
    cfg.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::InvalidInput("probe needs train and eval utterances".into()));
    }
    let feature_dim = train[0].features.dim();
    if labeler.input_dim() != cfg.stack * feature_dim {
        return Err(config_err!(
            "quantizer input dim {} does not match stack {} x feature dim {feature_dim}",
            labeler.input_dim(),
            cfg.stack
        ));
    }
    let train_ids = label_ids(labeler, train, stats, cfg.stack)?;
    let eval_ids = label_ids(labeler, eval, stats, cfg.stack)?;
    let mut pairing: Vec<usize> = (0..train.len()).collect();
    if cfg.shuffle_pairs {
        pairing.shuffle(&mut rng::rng(cfg.seed, "probe-shuffle"));
    }

    let mut init = rng::rng(cfg.seed, "probe-init");
    let rows = labeler.vocab_size() + 1;
    let mut net = ProbeNet {
        embedding: rng::xavier_uniform(&mut init, &[rows, cfg.d_model], rows, cfg.d_model),
        trunk: init_trunk(&mut init, cfg.num_layers, cfg.d_model, cfg.ffn_dim),
        output: init_linear(&mut init, cfg.d_model, token_vocab_size + 1),
    };
    let mut adam = AdamState::new(net.slots(), AdamHyper::default());
    let mut pick = rng::rng(cfg.seed, "probe-batches");
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| pick.random_range(0..train.len())).collect();
        let batch: Vec<&[usize]> = idx.iter().map(|&i| train_ids[i].as_slice()).collect();
        let targets: Vec<&[usize]> = idx.iter().map(|&i| train[pairing[i]].transcript.as_slice()).collect();
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &net);
        let (logits, segments) = probe_forward(&mut tape, &vars, cfg.num_heads, &batch);
        let (loss, mean) = ctc_batch_node(&mut tape, logits, &segments, &targets)?;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "probe ctc loss".into(),
            });
        }
        losses.push(mean);
        let mut grads = tape.backward(loss);
        let g = layers::collect_grads(&mut grads, &vars, &net);
        let lr = transformer_lr(step, &cfg.schedule)?;
        adam_step(&mut net.slots_mut(), &g.iter().collect::<Vec<_>>(), &mut adam, lr)?;
        if step % 100 == 0 {
            log::info!("probe step {step}: ctc {mean:.4}");
        }
    }

    let mut hypotheses = Vec::with_capacity(eval.len());
    for chunk in eval_ids.chunks(32) {
        let mut tape = Tape::new();
        let vars = bind_frozen(&mut tape, &net);
        let ids: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        let (logits, segments) = probe_forward(&mut tape, &vars, cfg.num_heads, &ids);
        let value = tape.value(logits);
        for &(start, len) in &segments {
            let rows = Tensor::from_parts(
                vec![len, value.cols()],
                value.data()[start * value.cols()..(start + len) * value.cols()].to_vec(),
            );
            hypotheses.push(greedy_ctc_decode(&rows));
        }
    }
    let refs: Vec<Vec<usize>> = eval.iter().map(|u| u.transcript.clone()).collect();
    let ter = token_error_rate(&hypotheses, &refs)?;
    Ok(ProbeOutcome {
        ter,
        losses,
        hypotheses,
    })
}
