//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line each; exits nonzero if any fails.
//!
//! Positional arguments select criteria by number or by a substring of
//! their name, e.g. `cargo test --test acceptance -- 7 latency`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, RngCore};

use bestrq::data::{compute_stats, normalize, stack_frames, synth_corpus, FeatureSequence, SyntheticTaskSpec};
use bestrq::encoder::{forward, init_encoder, ContextMode, EncoderConfig, EncoderParams};
use bestrq::latency::{compare_hypotheses, parse_hypotheses_from};
use bestrq::masking::{apply_mask, sample_mask, MaskPlan};
use bestrq::numerics::{ScheduleConfig, Tensor};
use bestrq::quantizer::{utilization, RandomProjectionQuantizer, RpqSpec, VqVaeConfig, VqVariant};
use bestrq::rng::{self, DetRng};
use bestrq::training::{
    composed_loss_grad_check, ctc_loss, data_scaling_experiment, direct_asr_probe, evaluate_masked,
    fit_vqvae_targets, normalize_all, run_finetune, run_pretrain, scaling_csv, ter_gaps, Checkpoint,
    DirectAsrConfig, FinetuneConfig, FinetuneInit, PretrainConfig, PretrainData, ScalingConfig,
};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Shared between criteria: the default-size encoder pre-trained for the
/// learning check is reused as the transfer initialization.
#[derive(Default)]
struct Shared {
    pretrained: Option<Checkpoint>,
}

const TOKENS: usize = 12;

fn task() -> SyntheticTaskSpec {
    SyntheticTaskSpec::default()
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        d_model: 64,
        num_heads: 4,
        ffn_dim: 256,
        input_dim: 80,
        vocab_size: 256,
        context_mode: ContextMode::full(),
        seed: 0,
    }
}

/// Label-scarce fine-tuning recipe shared by the comparative criteria.
fn finetune_recipe(encoder: EncoderConfig, seed: u64) -> FinetuneConfig {
    FinetuneConfig {
        encoder,
        steps: 300,
        batch_size: 8,
        seed,
        head_schedule: ScheduleConfig {
            peak_lr: 1e-3,
            warmup_steps: 50,
        },
        ..FinetuneConfig::default()
    }
}

// Independent nearest-code oracle: explicit Euclidean distances after
// optional normalization of both the projection and every code.
fn nearest_code(q: &RandomProjectionQuantizer, x: &[f32]) -> usize {
    let spec = q.spec();
    let (d, h) = (spec.input_dim, spec.code_dim);
    let a = q.projection().data();
    let mut y: Vec<f64> = (0..h)
        .map(|i| (0..d).map(|j| a[i * d + j] as f64 * x[j] as f64).sum())
        .collect();
    let unit = |v: &mut [f64]| {
        let n = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        v.iter_mut().for_each(|e| *e /= n);
    };
    if spec.l2_normalize {
        unit(&mut y);
    }
    let mut best = (usize::MAX, f64::INFINITY);
    for (k, row) in q.codebook().data().chunks(h).enumerate() {
        let mut c: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        if spec.l2_normalize {
            unit(&mut c);
        }
        let dist: f64 = c.iter().zip(&y).map(|(p, r)| (p - r) * (p - r)).sum();
        if dist < best.1 {
            best = (k, dist);
        }
    }
    best.0
}

fn random_vector(r: &mut DetRng, d: usize) -> Vec<f32> {
    (0..d).map(|_| rng::normal::<f32>(r, 1.0)).collect()
}

fn quantizer_oracle(_: &mut Shared) -> Check {
    let mut r = rng::rng(1, "acceptance-oracle");
    let mut agree = 0;
    for case in 0..1000 {
        let spec = RpqSpec {
            input_dim: r.random_range(1..=24),
            code_dim: r.random_range(1..=16),
            codebook_size: r.random_range(1..=64),
            seed: r.next_u64(),
            l2_normalize: case % 2 == 0,
        };
        let q = RandomProjectionQuantizer::new(spec).map_err(fail)?;
        let x = random_vector(&mut r, spec.input_dim);
        if q.quantize(&x).map_err(fail)? == nearest_code(&q, &x) {
            agree += 1;
        }
    }
    ensure(agree == 1000, format!("{agree}/1000 labels equal the brute-force argmin"))
}

fn scale_invariance(_: &mut Shared) -> Check {
    let mut r = rng::rng(2, "acceptance-scale");
    let (mut agree, mut total) = (0, 0);
    for _ in 0..1000 {
        let spec = RpqSpec {
            input_dim: r.random_range(2..=32),
            code_dim: r.random_range(2..=16),
            codebook_size: r.random_range(2..=64),
            seed: r.next_u64(),
            l2_normalize: true,
        };
        let q = RandomProjectionQuantizer::new(spec).map_err(fail)?;
        // Regenerate on exact ties between the two best codes.
        let x = loop {
            let x = random_vector(&mut r, spec.input_dim);
            if !has_exact_tie(&q, &x) {
                break x;
            }
        };
        let base = q.quantize(&x).map_err(fail)?;
        for alpha in [0.1f32, 3.0, 100.0] {
            let scaled: Vec<f32> = x.iter().map(|v| v * alpha).collect();
            total += 1;
            if q.quantize(&scaled).map_err(fail)? == base {
                agree += 1;
            }
        }
    }
    ensure(agree == total, format!("{agree}/{total} scaled inputs keep their label"))
}

fn has_exact_tie(q: &RandomProjectionQuantizer, x: &[f32]) -> bool {
    let y = q.project(x).unwrap();
    let h = q.spec().code_dim;
    let mut scores: Vec<f64> = q
        .codebook()
        .data()
        .chunks(h)
        .map(|c| {
            let n = c.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            c.iter().zip(&y).map(|(&a, b)| a as f64 * b).sum::<f64>() / n
        })
        .collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.len() > 1 && scores[0] == scores[1]
}

fn stacked_corpus(count: usize, seed: u64) -> Result<Vec<FeatureSequence>, String> {
    let corpus = synth_corpus(&task(), count, seed).map_err(fail)?;
    let stats = compute_stats(corpus.iter().map(|u| &u.features)).map_err(fail)?;
    corpus
        .iter()
        .map(|u| normalize(&u.features, &stats).and_then(|s| stack_frames(&s, 4)).map_err(fail))
        .collect()
}

fn frozen_determinism(_: &mut Shared) -> Check {
    let spec = PretrainConfig::default().rpq_spec(20);
    let a = RandomProjectionQuantizer::new(spec).map_err(fail)?;
    let b = RandomProjectionQuantizer::new(spec).map_err(fail)?;
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same_matrices = bits(a.projection()) == bits(b.projection()) && bits(a.codebook()) == bits(b.codebook());
    let corpus = stacked_corpus(50, 3)?;
    let mut frames = 0;
    let mut same_labels = true;
    for seq in &corpus {
        let la = a.quantize_sequence(seq).map_err(fail)?;
        same_labels &= la == b.quantize_sequence(seq).map_err(fail)?;
        frames += la.len();
    }
    ensure(
        same_matrices && same_labels,
        format!("matrices identical: {same_matrices}, labels identical on {frames} frames: {same_labels}"),
    )
}

fn masking_statistics(_: &mut Shared) -> Check {
    let len = 1_000_000;
    let plan = sample_mask(len, 0.01, 40, 7).map_err(fail)?;
    let start_freq = plan.starts.len() as f64 / len as f64;

    let (frames, dim) = (5000, 20);
    let zeros = FeatureSequence::from_rows(frames, dim, vec![0.0; frames * dim], 10.0).map_err(fail)?;
    let full = MaskPlan::from_starts(frames, 40, 0.01, (0..frames).step_by(40).collect()).map_err(fail)?;
    let masked = apply_mask(&zeros, &full, 0.1, 11).map_err(fail)?;
    let values = masked.masked.frames().data();
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    ensure(
        values.len() == 100_000
            && (0.0095..=0.0105).contains(&start_freq)
            && mean.abs() < 0.002
            && (0.098..=0.102).contains(&std),
        format!(
            "start frequency {start_freq:.5}, noise over {} values: mean {mean:.5}, std {std:.5}",
            values.len()
        ),
    )
}

fn max_deviation(a: &Tensor<f32>, b: &Tensor<f32>, upto: usize) -> f64 {
    let v = a.cols();
    a.data()[..upto * v]
        .iter()
        .zip(&b.data()[..upto * v])
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max)
}

fn perturbed(x: &Tensor<f32>, rows: std::ops::Range<usize>, r: &mut DetRng) -> Tensor<f32> {
    let mut out = x.clone();
    for t in rows {
        for v in out.row_mut(t) {
            *v = rng::normal(r, 3.0);
        }
    }
    out
}

fn causality(_: &mut Shared) -> Check {
    let config = |mode| EncoderConfig {
        num_layers: 3,
        d_model: 32,
        num_heads: 4,
        ffn_dim: 64,
        input_dim: 8,
        vocab_size: 16,
        context_mode: mode,
        seed: 5,
    };
    let len = 32;
    let mut r = rng::rng(5, "acceptance-causality");
    let causal = ContextMode::causal(None);
    let lookahead = ContextMode::causal_lookahead(None, 3);
    let causal_params: EncoderParams<f32> = init_encoder(&config(causal)).map_err(fail)?;
    let look_params: EncoderParams<f32> = init_encoder(&config(lookahead)).map_err(fail)?;
    let (mut causal_worst, mut look_worst, mut edge_min) = (0.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..20 {
        let x: Tensor<f32> = rng::standard_normal(&mut r, &[len, 8]);
        let t = r.random_range(0..len - 4);
        let before = forward(&causal_params, &x, causal).map_err(fail)?;
        let after = forward(&causal_params, &perturbed(&x, t + 1..len, &mut r), causal).map_err(fail)?;
        causal_worst = causal_worst.max(max_deviation(&before, &after, t + 1));

        let before = forward(&look_params, &x, lookahead).map_err(fail)?;
        let beyond = forward(&look_params, &perturbed(&x, t + 4..len, &mut r), lookahead).map_err(fail)?;
        look_worst = look_worst.max(max_deviation(&before, &beyond, t + 1));
        // The last frame inside the window must still reach position t.
        let edge = forward(&look_params, &perturbed(&x, t + 3..t + 4, &mut r), lookahead).map_err(fail)?;
        let row = |m: &Tensor<f32>| m.row(t).to_vec();
        let moved = row(&before).iter().zip(row(&edge)).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max);
        edge_min = edge_min.min(moved);
    }
    ensure(
        causal_worst <= 1e-6 && look_worst <= 1e-6 && edge_min > 1e-4,
        format!(
            "causal max deviation {causal_worst:.2e}; lookahead 3: beyond-window {look_worst:.2e}, in-window min effect {edge_min:.2e}"
        ),
    )
}

fn gradient_check(_: &mut Shared) -> Check {
    let config = EncoderConfig {
        num_layers: 2,
        d_model: 8,
        num_heads: 2,
        ffn_dim: 16,
        input_dim: 8,
        vocab_size: 8,
        context_mode: ContextMode::causal_lookahead(None, 1),
        seed: 3,
    };
    let report = composed_loss_grad_check(&config, 6, 17, 1e-5).map_err(fail)?;
    ensure(
        report.max_rel_error < 1e-4,
        format!("max relative error {:.2e} (f64, central differences)", report.max_rel_error),
    )
}

/// `-ln` of the total probability of all frame paths that collapse to
/// `target`, by enumeration. The blank is the last column.
fn ctc_path_sum(logits: &[f64], frames: usize, vocab: usize, target: &[usize]) -> f64 {
    let blank = vocab - 1;
    let log_probs: Vec<f64> = logits
        .chunks(vocab)
        .flat_map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter().map(move |v| v - z).collect::<Vec<_>>()
        })
        .collect();
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    for code in 0..vocab.pow(frames as u32) {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % vocab;
            c /= vocab;
        }
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != blank {
                collapsed.push(s);
            }
            prev = Some(s);
        }
        if collapsed == target {
            total += path.iter().enumerate().map(|(t, &s)| log_probs[t * vocab + s]).sum::<f64>().exp();
        }
    }
    -total.ln()
}

fn ctc_oracle(_: &mut Shared) -> Check {
    let mut r = rng::rng(7, "acceptance-ctc");
    let (mut cases, mut worst, mut feasibility_ok) = (0usize, 0.0f64, true);
    for vocab in 2usize..=4 {
        for frames in 1..=6 {
            for len in 0..=3 {
                let symbols = vocab - 1;
                for code in 0..symbols.pow(len as u32) {
                    let target: Vec<usize> = (0..len).map(|i| code / symbols.pow(i as u32) % symbols).collect();
                    let logits: Vec<f64> = (0..frames * vocab).map(|_| rng::normal(&mut r, 2.0)).collect();
                    let expected = ctc_path_sum(&logits, frames, vocab, &target);
                    let t = Tensor::from_vec(&[frames, vocab], logits).map_err(fail)?;
                    let got = ctc_loss(&t, &target).map_err(fail)?;
                    cases += 1;
                    if expected.is_infinite() {
                        feasibility_ok &= !got.feasible && got.loss.is_infinite();
                    } else {
                        feasibility_ok &= got.feasible;
                        worst = worst.max((got.loss - expected).abs());
                    }
                }
            }
        }
    }
    ensure(
        feasibility_ok && worst <= 1e-10,
        format!("{cases} instances, max |DP - path sum| {worst:.2e}, feasibility agrees: {feasibility_ok}"),
    )
}

fn pretraining_learns(shared: &mut Shared) -> Check {
    let cfg = PretrainConfig::default();
    let corpus = synth_corpus(&task(), 8000, 11).map_err(fail)?;
    let outcome = run_pretrain(&cfg, &corpus, None, None).map_err(fail)?;
    let held_out = synth_corpus(&task(), 300, 99).map_err(fail)?;
    let data = PretrainData::new(
        normalize_all(&held_out, &outcome.stats).map_err(fail)?,
        &outcome.quantizer,
        cfg.stack,
    )
    .map_err(fail)?;
    let eval = evaluate_masked(&outcome.checkpoint.params, &data, &cfg.mask, 5).map_err(fail)?;
    let accuracy = eval.accuracy.ok_or("no masked positions in held-out set")?;
    let threshold = 10.0 / cfg.encoder.vocab_size as f64;
    shared.pretrained = Some(outcome.checkpoint);
    ensure(
        accuracy >= threshold,
        format!(
            "held-out masked top-1 accuracy {:.2}% over {} positions after {} steps (need >= {:.2}%)",
            100.0 * accuracy,
            eval.masked_positions,
            cfg.steps,
            100.0 * threshold
        ),
    )
}

fn transfer(shared: &mut Shared) -> Check {
    let checkpoint = shared
        .pretrained
        .clone()
        .ok_or("needs the checkpoint from the pre-training criterion")?;
    let train = synth_corpus(&task(), 8, 21).map_err(fail)?;
    let eval = synth_corpus(&task(), 100, 22).map_err(fail)?;
    let init = FinetuneInit::Pretrained(Box::new(checkpoint));
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5 {
        let cfg = finetune_recipe(FinetuneConfig::default().encoder, seed);
        let (_, scratch) = run_finetune(&cfg, &FinetuneInit::Scratch, &train, &eval, TOKENS).map_err(fail)?;
        let (_, pre) = run_finetune(&cfg, &init, &train, &eval, TOKENS).map_err(fail)?;
        wins += usize::from(pre.ter < scratch.ter);
        pairs.push(format!("{:.3}/{:.3}", pre.ter, scratch.ter));
    }
    ensure(
        wins >= 4,
        format!("pretrained beats scratch in {wins}/5 seeds (pretrained/scratch TER: {})", pairs.join(" ")),
    )
}

fn quantizer_quality(_: &mut Shared) -> Check {
    let encoder = small_encoder();
    let pre = PretrainConfig {
        encoder: encoder.clone(),
        steps: 2000,
        ..PretrainConfig::default()
    };
    let corpus = synth_corpus(&task(), 4000, 11).map_err(fail)?;
    let probe_train = synth_corpus(&task(), 200, 23).map_err(fail)?;
    let train = synth_corpus(&task(), 32, 21).map_err(fail)?;
    let eval = synth_corpus(&task(), 200, 22).map_err(fail)?;
    let stats = compute_stats(corpus.iter().map(|u| &u.features)).map_err(fail)?;
    let (vq, _) = fit_vqvae_targets(VqVariant::Transformer, &corpus, &pre, &VqVaeConfig::default(), 0).map_err(fail)?;

    let mut probe = BTreeMap::new();
    let mut downstream = BTreeMap::new();
    for (name, quantizer) in [("rpq", None), ("tvae", Some(vq))] {
        let outcome = run_pretrain(&pre, &corpus, quantizer, None).map_err(fail)?;
        let p = direct_asr_probe(&outcome.quantizer, &probe_train, &eval, &stats, TOKENS, &DirectAsrConfig::default())
            .map_err(fail)?;
        probe.insert(name, p.ter);
        let init = FinetuneInit::Pretrained(Box::new(outcome.checkpoint));
        let mut sum = 0.0;
        for seed in 0..3 {
            let (_, ft) = run_finetune(&finetune_recipe(encoder.clone(), seed), &init, &train, &eval, TOKENS)
                .map_err(fail)?;
            sum += ft.ter;
        }
        downstream.insert(name, sum / 3.0);
    }
    let (pr, pt) = (probe["rpq"], probe["tvae"]);
    let (fr, ft) = (downstream["rpq"], downstream["tvae"]);
    let relative = if fr.max(ft) > 0.0 { (fr - ft).abs() / fr.max(ft) } else { 0.0 };
    ensure(
        pt < pr && relative <= 0.1,
        format!(
            "direct probe TER tvae {pt:.4} vs rpq {pr:.4}; fine-tuned TER tvae {ft:.4} vs rpq {fr:.4} ({:.1}% apart)",
            100.0 * relative
        ),
    )
}

fn data_scaling(_: &mut Shared) -> Check {
    let encoder = small_encoder();
    let cfg = ScalingConfig {
        fractions: vec![1.0 / 64.0, 4.0 / 64.0, 16.0 / 64.0, 1.0],
        pretrain: PretrainConfig {
            encoder: encoder.clone(),
            steps: 2000,
            ..PretrainConfig::default()
        },
        vqvae: VqVaeConfig::default(),
        finetune: finetune_recipe(encoder, 0),
        vqvae_seed: 0,
    };
    let corpus = synth_corpus(&task(), 4000, 11).map_err(fail)?;
    let train = synth_corpus(&task(), 8, 21).map_err(fail)?;
    let eval = synth_corpus(&task(), 200, 22).map_err(fail)?;
    let rows = data_scaling_experiment(&cfg, &corpus, &train, &eval, TOKENS).map_err(fail)?;
    print!("{}", scaling_csv(&rows));
    let gaps = ter_gaps(&rows);
    let (smallest, largest) = (gaps[0].1, gaps[gaps.len() - 1].1);
    ensure(
        largest < smallest,
        format!("TER gap {largest:.4} at full data vs {smallest:.4} at 1/64"),
    )
}

const BASE_HYPS: &str = r#"{"id":"u1","words":[{"w":"the","s":0,"e":90},{"w":"cat","s":100,"e":190},{"w":"sat","s":200,"e":290}]}
{"id":"u2","words":[{"w":"hello","s":0,"e":400},{"w":"world","s":500,"e":900}]}
{"id":"only-base","words":[{"w":"x","s":0,"e":10}]}
"#;

const UNIFORM_SHIFT_HYPS: &str = r#"{"id":"u1","words":[{"w":"the","s":25,"e":115},{"w":"cat","s":125,"e":215},{"w":"sat","s":225,"e":315}]}
{"id":"u2","words":[{"w":"hello","s":25,"e":425},{"w":"world","s":525,"e":925}]}
"#;

// Matched (start, end) shifts: the (+10, +5), sat (-10, -10), hello
// (+15, +25), world (+5, 0). "bat" is a substitution and "on" an
// insertion, so neither counts. Mean 40 / (2 * 4) = 5.
const MIXED_SHIFT_HYPS: &str = r#"{"id":"u1","words":[{"w":"the","s":10,"e":95},{"w":"bat","s":130,"e":180},{"w":"sat","s":190,"e":280},{"w":"on","s":300,"e":350}]}
{"id":"u2","words":[{"w":"hello","s":15,"e":425},{"w":"world","s":505,"e":900}]}
"#;

fn latency_exactness(_: &mut Shared) -> Check {
    let parse = |text: &str, name: &str| parse_hypotheses_from(text.as_bytes(), Path::new(name)).map_err(fail);
    let base = parse(BASE_HYPS, "base.jsonl")?;
    let mut values = Vec::new();
    for (text, name) in [
        (BASE_HYPS, "base.jsonl"),
        (UNIFORM_SHIFT_HYPS, "shift.jsonl"),
        (MIXED_SHIFT_HYPS, "mixed.jsonl"),
    ] {
        values.push(compare_hypotheses(&base, &parse(text, name)?).map_err(fail)?.relative_latency_ms);
    }
    ensure(
        values == [0.0, 25.0, 5.0],
        format!("self {} ms, uniform shift {} ms, mixed shift {} ms", values[0], values[1], values[2]),
    )
}

fn l2_utilization(_: &mut Shared) -> Check {
    let (count, d) = (8192, 80);
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let mut r = rng::rng(seed, "acceptance-utilization");
        let raw = FeatureSequence::from_rows(count, d, (0..count * d).map(|_| rng::normal(&mut r, 1.0)).collect(), 10.0)
            .map_err(fail)?;
        let inputs = normalize(&raw, &compute_stats([&raw]).map_err(fail)?).map_err(fail)?;
        let mut entropy = [0.0; 2];
        for (slot, l2) in [true, false].into_iter().enumerate() {
            let spec = RpqSpec {
                input_dim: d,
                code_dim: 16,
                codebook_size: 256,
                seed,
                l2_normalize: l2,
            };
            let labels = RandomProjectionQuantizer::new(spec)
                .and_then(|q| q.quantize_sequence(&inputs))
                .map_err(fail)?;
            entropy[slot] = utilization(labels, spec.codebook_size).map_err(fail)?.normalized_entropy;
        }
        wins += usize::from(entropy[0] > entropy[1]);
        pairs.push(format!("{:.3}/{:.3}", entropy[0], entropy[1]));
    }
    ensure(
        wins >= 4,
        format!("normalized entropy higher with l2 in {wins}/5 seeds (on/off: {})", pairs.join(" ")),
    )
}

type Criterion = fn(&mut Shared) -> Check;

const CRITERIA: [(&str, Criterion); 13] = [
    ("quantizer matches brute-force argmin", quantizer_oracle),
    ("quantizer is scale invariant", scale_invariance),
    ("frozen quantizer is deterministic", frozen_determinism),
    ("masking statistics", masking_statistics),
    ("encoder causality and lookahead", causality),
    ("composed loss gradient check", gradient_check),
    ("ctc loss matches path enumeration", ctc_oracle),
    ("pre-training learns masked labels", pretraining_learns),
    ("pre-training transfers to fine-tuning", transfer),
    ("quantizer quality ordering", quantizer_quality),
    ("data scaling closes the quantizer gap", data_scaling),
    ("latency tool exactness", latency_exactness),
    ("l2 normalization spreads code usage", l2_utilization),
];

fn selected(index: usize, name: &str, filters: &[String]) -> bool {
    filters.is_empty() || filters.iter().any(|f| f == &(index + 1).to_string() || name.contains(f.as_str()))
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        // Transfer reuses the pre-trained checkpoint.
        let needed = selected(i, name, &filters) || (i == 7 && selected(8, CRITERIA[8].0, &filters));
        if !needed {
            continue;
        }
        let start = Instant::now();
        let result = check(&mut shared);
        let secs = start.elapsed().as_secs_f64();
        if !selected(i, name, &filters) {
            continue;
        }
        ran += 1;
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
