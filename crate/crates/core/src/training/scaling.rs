//! Pre-training data scaling: for each corpus fraction, pre-train once with
//! random-projection targets and once with transformer VQ-VAE targets (the
//! VQ-VAE sees the same fraction), fine-tune both, and compare error rates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::finetune::{run_finetune, FinetuneConfig, FinetuneInit};
use super::pretrain::{data_subset, normalize_all, run_pretrain, PretrainConfig};
use crate::data::{compute_stats, stack_frames, FeatureSequence, Utterance};
use crate::error::{config_err, Error, Result};
use crate::quantizer::{train_vqvae, Quantizer, VqTrainReport, VqVaeConfig, VqVariant};

pub const SCALING_HEADER: &str = "quantizer,fraction,pretrain_utterances,ter";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub fractions: Vec<f64>,
    pub pretrain: PretrainConfig,
    pub vqvae: VqVaeConfig,
    pub finetune: FinetuneConfig,
    pub vqvae_seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            fractions: vec![1.0 / 64.0, 4.0 / 64.0, 16.0 / 64.0, 1.0],
            pretrain: PretrainConfig::default(),
            vqvae: VqVaeConfig::default(),
            finetune: FinetuneConfig::default(),
            vqvae_seed: 0,
        }
    }
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(config_err!("at least one data fraction is required"));
        }
        if let Some(f) = self.fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return Err(config_err!("data fraction {f} outside (0, 1]"));
        }
        if self.vqvae.codebook_size != self.pretrain.encoder.vocab_size {
            return Err(config_err!(
                "vq-vae codebook_size {} must equal encoder vocab_size {}",
                self.vqvae.codebook_size,
                self.pretrain.encoder.vocab_size
            ));
        }
        self.vqvae.validate()?;
        self.pretrain.validate(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub quantizer: String,
    pub fraction: f64,
    pub pretrain_utterances: usize,
    pub ter: f64,
}

/// Normalized, stacked copy of the leading `fraction` of `corpus`, using
/// statistics of that same share, as pre-training would see it.
pub fn stacked_subset(corpus: &[Utterance], fraction: f64, stack: usize) -> Result<Vec<FeatureSequence>> {
    let subset = data_subset(corpus, fraction);
    let stats = compute_stats(subset.iter().map(|u| &u.features))?;
    normalize_all(subset, &stats)?
        .iter()
        .map(|s| stack_frames(s, stack))
        .collect()
}

/// Trains a VQ-VAE on the share of `corpus` that a pre-training run with
/// `pretrain` would use.
pub fn fit_vqvae_targets(
    variant: VqVariant,
    corpus: &[Utterance],
    pretrain: &PretrainConfig,
    vqvae: &VqVaeConfig,
    seed: u64,
) -> Result<(Quantizer, VqTrainReport)> {
    let data = stacked_subset(corpus, pretrain.data_fraction, pretrain.stack)?;
    let (q, report) = train_vqvae(variant, &data, vqvae, seed)?;
    Ok((Quantizer::VqVae(q), report))
}

/// Runs the full grid; rows come out fraction by fraction, random
/// projection first.
pub fn data_scaling_experiment(
    cfg: &ScalingConfig,
    unlabeled: &[Utterance],
    train: &[Utterance],
    eval: &[Utterance],
    token_vocab_size: usize,
) -> Result<Vec<ScalingRow>> {
    cfg.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::InvalidInput("pre-training corpus is empty".into()));
    }
    let mut rows = Vec::with_capacity(2 * cfg.fractions.len());
    for &fraction in &cfg.fractions {
        let pre = PretrainConfig {
            data_fraction: fraction,
            ..cfg.pretrain.clone()
        };
        let used = data_subset(unlabeled, fraction).len();
        let (vq, _) = fit_vqvae_targets(VqVariant::Transformer, unlabeled, &pre, &cfg.vqvae, cfg.vqvae_seed)?;
        for (name, quantizer) in [("rpq", None), ("tvae", Some(vq))] {
            log::info!("scaling: {name} at fraction {fraction} ({used} utterances)");
            let outcome = run_pretrain(&pre, unlabeled, quantizer, None)?;
            let init = FinetuneInit::Pretrained(Box::new(outcome.checkpoint));
            let (_, ft) = run_finetune(&cfg.finetune, &init, train, eval, token_vocab_size)?;
            rows.push(ScalingRow {
                quantizer: name.into(),
                fraction,
                pretrain_utterances: used,
                ter: ft.ter,
            });
        }
    }
    Ok(rows)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from(SCALING_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.quantizer, r.fraction, r.pretrain_utterances, r.ter);
    }
    out
}

/// `|TER(rpq) - TER(tvae)|` at each fraction, in input order.
pub fn ter_gaps(rows: &[ScalingRow]) -> Vec<(f64, f64)> {
    let mut gaps = Vec::new();
    for r in rows.iter().filter(|r| r.quantizer == "rpq") {
        if let Some(v) = rows.iter().find(|v| v.quantizer == "tvae" && v.fraction == r.fraction) {
            gaps.push((r.fraction, (r.ter - v.ter).abs()));
        }
    }
    gaps
}
