use super::config::ContextMode;
use super::model::{forward, EncoderParams};
use crate::error::{invalid, Result};
use crate::numerics::{Real, Tensor};
use crate::rng;

/// Max absolute change of outputs at positions `<= t` after replacing every
/// frame from `t + 1 + lookahead` onward with fresh noise. For full context
/// the perturbation starts at `t + 1`.
pub fn causality_probe<F: Real>(
    params: &EncoderParams<F>,
    features: &Tensor<F>,
    mode: ContextMode,
    t: usize,
    seed: u64,
) -> Result<f64> {
    let from = t + 1 + mode.lookahead().unwrap_or(0);
    causality_probe_from(params, features, mode, t, from, seed)
}

/// As [`causality_probe`], with an explicit first perturbed frame.
pub fn causality_probe_from<F: Real>(
    params: &EncoderParams<F>,
    features: &Tensor<F>,
    mode: ContextMode,
    t: usize,
    perturb_from: usize,
    seed: u64,
) -> Result<f64> {
    let len = features.rows();
    if t >= len {
        return Err(invalid!("probe position {t} outside sequence of length {len}"));
    }
    let before = forward(params, features, mode)?;
    let mut perturbed = features.clone();
    let mut r = rng::rng(seed, "causality-probe");
    let d = features.cols();
    for row in perturbed_rows(perturb_from, len) {
        for j in 0..d {
            perturbed.row_mut(row)[j] = rng::normal(&mut r, 3.0);
        }
    }
    let after = forward(params, &perturbed, mode)?;
    let v = before.cols();
    let mut worst = 0.0f64;
    for (a, b) in before.data()[..(t + 1) * v].iter().zip(&after.data()[..(t + 1) * v]) {
        worst = worst.max((a.to_f64() - b.to_f64()).abs());
    }
    Ok(worst)
}

fn perturbed_rows(from: usize, len: usize) -> std::ops::Range<usize> {
    from.min(len)..len
}
