//! Seeded stand-in corpus: token sequences from a Markov chain, each token
//! rendered as a run of noisy copies of a fixed embedding frame.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::features::{FeatureSequence, DEFAULT_STRIDE_MS};
use crate::error::{config_err, Result};
use crate::rng::{self, DetRng};

fn default_task_seed() -> u64 {
    1
}

fn default_concentration() -> f64 {
    0.3
}

fn default_stride() -> f32 {
    DEFAULT_STRIDE_MS
}

/// Parameters of the synthetic recognition task.
///
/// `task_seed` fixes the chain and embeddings; the `seed` passed to
/// [`synth_corpus`] only picks which utterances are drawn, so corpora drawn
/// with different seeds share one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub token_vocab_size: usize,
    pub frames_per_token: usize,
    pub feature_dim: usize,
    pub emission_noise_std: f64,
    pub transition_order: usize,
    pub utterance_length_range: (usize, usize),
    #[serde(default = "default_task_seed")]
    pub task_seed: u64,
    /// Dirichlet concentration of each transition row; small values give
    /// peaked, predictable successors.
    #[serde(default = "default_concentration")]
    pub transition_concentration: f64,
    #[serde(default = "default_stride")]
    pub frame_stride_ms: f32,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            token_vocab_size: 12,
            frames_per_token: 8,
            feature_dim: 20,
            emission_noise_std: 1.0,
            transition_order: 1,
            utterance_length_range: (8, 16),
            task_seed: default_task_seed(),
            transition_concentration: default_concentration(),
            frame_stride_ms: DEFAULT_STRIDE_MS,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.token_vocab_size < 1 || self.frames_per_token < 1 || self.feature_dim < 1 {
            return Err(config_err!("synthetic sizes must all be at least 1"));
        }
        if self.transition_order < 1 {
            return Err(config_err!("transition_order must be at least 1"));
        }
        if self.token_vocab_size.checked_pow(self.transition_order as u32).map_or(true, |n| n > 1 << 20) {
            return Err(config_err!("vocab^order too large for an explicit transition table"));
        }
        if !(self.emission_noise_std >= 0.0 && self.emission_noise_std.is_finite()) {
            return Err(config_err!("emission_noise_std must be >= 0"));
        }
        let (lo, hi) = self.utterance_length_range;
        if lo < 1 || hi < lo {
            return Err(config_err!("utterance_length_range must satisfy 1 <= min <= max"));
        }
        if !(self.transition_concentration > 0.0 && self.transition_concentration.is_finite()) {
            return Err(config_err!("transition_concentration must be positive"));
        }
        if !(self.frame_stride_ms > 0.0) {
            return Err(config_err!("frame_stride_ms must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureSequence,
    pub transcript: Vec<usize>,
}

/// The materialized chain and emission table for a [`SyntheticTaskSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    spec: SyntheticTaskSpec,
    embeddings: Vec<Vec<f32>>,
    transitions: Vec<Vec<f64>>,
}

impl SyntheticTask {
    pub fn new(spec: &SyntheticTaskSpec) -> Result<Self> {
        spec.validate()?;
        let v = spec.token_vocab_size;
        let d = spec.feature_dim;
        let mut r = rng::rng(spec.task_seed, "synth-embeddings");
        // Shared per-dimension offset so raw features are not zero-mean.
        let offset: Vec<f32> = (0..d).map(|_| rng::normal(&mut r, 2.0)).collect();
        let embeddings = (0..v)
            .map(|_| offset.iter().map(|o| o + rng::normal::<f32>(&mut r, 1.0)).collect())
            .collect();
        let gamma = Gamma::new(spec.transition_concentration, 1.0)
            .map_err(|e| config_err!("bad concentration: {e}"))?;
        let mut r = rng::rng(spec.task_seed, "synth-transitions");
        let contexts = v.pow(spec.transition_order as u32);
        let transitions = (0..contexts)
            .map(|ctx| {
                let last = ctx % v;
                let mut row: Vec<f64> = (0..v)
                    .map(|tok| {
                        let g = gamma.sample(&mut r).max(1e-12);
                        // No immediate repeats: repeated tokens would be
                        // indistinguishable frame runs.
                        if v > 1 && tok == last {
                            0.0
                        } else {
                            g
                        }
                    })
                    .collect();
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
                row
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            embeddings,
            transitions,
        })
    }

    pub fn spec(&self) -> &SyntheticTaskSpec {
        &self.spec
    }

    pub fn embedding(&self, token: usize) -> &[f32] {
        &self.embeddings[token]
    }

    /// Index of a full-length history, most recent token least significant.
    pub fn context_index(&self, history: &[usize]) -> usize {
        let v = self.spec.token_vocab_size;
        history
            .iter()
            .rev()
            .take(self.spec.transition_order)
            .rev()
            .fold(0, |acc, &t| acc * v + t)
    }

    pub fn transition_row(&self, context: usize) -> &[f64] {
        &self.transitions[context]
    }

    pub fn sample_tokens(&self, r: &mut DetRng, len: usize) -> Vec<usize> {
        let v = self.spec.token_vocab_size;
        let order = self.spec.transition_order;
        let mut toks: Vec<usize> = Vec::with_capacity(len);
        for _ in 0..len {
            let next = if toks.len() < order {
                // Uniform start, still avoiding an immediate repeat.
                loop {
                    let t = r.random_range(0..v);
                    if v == 1 || toks.last() != Some(&t) {
                        break t;
                    }
                }
            } else {
                let row = self.transition_row(self.context_index(&toks));
                sample_categorical(r, row)
            };
            toks.push(next);
        }
        toks
    }

    pub fn render(&self, r: &mut DetRng, tokens: &[usize]) -> Result<FeatureSequence> {
        let d = self.spec.feature_dim;
        let fpt = self.spec.frames_per_token;
        let noise = self.spec.emission_noise_std;
        let mut data = Vec::with_capacity(tokens.len() * fpt * d);
        for &t in tokens {
            let e = &self.embeddings[t];
            for _ in 0..fpt {
                for &ev in e {
                    let n: f32 = if noise > 0.0 { rng::normal(r, noise) } else { 0.0 };
                    data.push(ev + n);
                }
            }
        }
        FeatureSequence::from_rows(tokens.len() * fpt, d, data, self.spec.frame_stride_ms)
    }

    pub fn generate(&self, count: usize, seed: u64) -> Result<Vec<Utterance>> {
        if count < 1 {
            return Err(config_err!("corpus count must be at least 1"));
        }
        let (lo, hi) = self.spec.utterance_length_range;
        (0..count)
            .map(|i| {
                let mut r = rng::rng(rng::derive(seed, i as u64), "synth-utterance");
                let len = r.random_range(lo..=hi);
                let transcript = self.sample_tokens(&mut r, len);
                let features = self.render(&mut r, &transcript)?;
                Ok(Utterance {
                    id: format!("utt{i:06}"),
                    features,
                    transcript,
                })
            })
            .collect()
    }
}

fn sample_categorical(r: &mut DetRng, probs: &[f64]) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding slack: fall back to the last index with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws `count` utterances of the task described by `spec`.
pub fn synth_corpus(spec: &SyntheticTaskSpec, count: usize, seed: u64) -> Result<Vec<Utterance>> {
    SyntheticTask::new(spec)?.generate(count, seed)
}
