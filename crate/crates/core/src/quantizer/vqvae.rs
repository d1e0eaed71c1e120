//! Trained VQ-VAE quantizers used as a comparison point for the frozen
//! random-projection quantizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SequenceLabeler;
use crate::data::FeatureSequence;
use crate::encoder::layers::{self, bind, init_linear, init_trunk, Encoder, Linear, ParamTree};
use crate::encoder::ContextMode;
use crate::error::{config_err, shape_err, Error, Result};
use crate::numerics::{adam_step, AdamHyper, AdamState, Tape, Tensor, Var};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VqVariant {
    /// Bias-free linear encoder, linear decoder.
    Projection,
    /// Small transformer encoder and decoder over whole utterances.
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerShape {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
}

impl Default for TransformerShape {
    fn default() -> Self {
        Self {
            num_layers: 2,
            d_model: 64,
            num_heads: 4,
            ffn_dim: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqVaeConfig {
    pub code_dim: usize,
    pub codebook_size: usize,
    pub steps: usize,
    /// Utterances per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub commitment: f64,
    pub l2_normalize: bool,
    pub transformer: TransformerShape,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            code_dim: 16,
            codebook_size: 256,
            steps: 1000,
            batch_size: 16,
            learning_rate: 1e-3,
            commitment: 0.25,
            l2_normalize: false,
            transformer: TransformerShape::default(),
        }
    }
}

impl VqVaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.code_dim == 0 || self.codebook_size == 0 || self.batch_size == 0 {
            return Err(config_err!("vq-vae sizes must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!("vq-vae learning_rate must be positive"));
        }
        if !(self.commitment >= 0.0) {
            return Err(config_err!("commitment weight must be >= 0"));
        }
        let t = &self.transformer;
        if t.d_model == 0 || t.num_heads == 0 || t.d_model % t.num_heads != 0 || t.ffn_dim == 0 {
            return Err(config_err!("invalid transformer shape {t:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VqNet<T> {
    Projection {
        /// `[d, h]`, no bias.
        encoder: T,
        decoder: Linear<T>,
    },
    Transformer {
        encoder: Encoder<T>,
        enc_out: Linear<T>,
        decoder: Encoder<T>,
        dec_out: Linear<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqParams<T> {
    pub net: VqNet<T>,
    /// `[n, h]`.
    pub codebook: T,
}

impl<T> ParamTree<T> for VqParams<T> {
    type Mapped<U> = VqParams<U>;
    fn map_ref<U>(&self, f: &mut dyn FnMut(&T) -> U) -> VqParams<U> {
        let net = match &self.net {
            VqNet::Projection { encoder, decoder } => VqNet::Projection {
                encoder: f(encoder),
                decoder: decoder.map_ref(f),
            },
            VqNet::Transformer {
                encoder,
                enc_out,
                decoder,
                dec_out,
            } => VqNet::Transformer {
                encoder: encoder.map_ref(f),
                enc_out: enc_out.map_ref(f),
                decoder: decoder.map_ref(f),
                dec_out: dec_out.map_ref(f),
            },
        };
        VqParams {
            net,
            codebook: f(&self.codebook),
        }
    }
    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a T)) {
        match &self.net {
            VqNet::Projection { encoder, decoder } => {
                f(encoder);
                decoder.for_each(f);
            }
            VqNet::Transformer {
                encoder,
                enc_out,
                decoder,
                dec_out,
            } => {
                encoder.for_each(f);
                enc_out.for_each(f);
                decoder.for_each(f);
                dec_out.for_each(f);
            }
        }
        f(&self.codebook);
    }
    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
        match &mut self.net {
            VqNet::Projection { encoder, decoder } => {
                f(encoder);
                decoder.for_each_mut(f);
            }
            VqNet::Transformer {
                encoder,
                enc_out,
                decoder,
                dec_out,
            } => {
                encoder.for_each_mut(f);
                enc_out.for_each_mut(f);
                decoder.for_each_mut(f);
                dec_out.for_each_mut(f);
            }
        }
        f(&mut self.codebook);
    }
}

/// A frozen, trained VQ-VAE. Labels come from the nearest codebook row to
/// the encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct VqVaeQuantizer {
    variant: VqVariant,
    input_dim: usize,
    config: VqVaeConfig,
    seed: u64,
    params: VqParams<Tensor<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqTrainReport {
    /// Total loss per step.
    pub losses: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

fn init_params(variant: VqVariant, d: usize, cfg: &VqVaeConfig, seed: u64) -> VqParams<Tensor<f32>> {
    let mut r = rng::rng(seed, "vqvae-init");
    let h = cfg.code_dim;
    let net = match variant {
        VqVariant::Projection => VqNet::Projection {
            encoder: rng::xavier_uniform(&mut r, &[d, h], d, h),
            decoder: init_linear(&mut r, h, d),
        },
        VqVariant::Transformer => {
            let t = &cfg.transformer;
            VqNet::Transformer {
                encoder: Encoder {
                    input: init_linear(&mut r, d, t.d_model),
                    trunk: init_trunk(&mut r, t.num_layers, t.d_model, t.ffn_dim),
                },
                enc_out: init_linear(&mut r, t.d_model, h),
                decoder: Encoder {
                    input: init_linear(&mut r, h, t.d_model),
                    trunk: init_trunk(&mut r, t.num_layers, t.d_model, t.ffn_dim),
                },
                dec_out: init_linear(&mut r, t.d_model, d),
            }
        }
    };
    VqParams {
        net,
        codebook: Tensor::zeros(&[cfg.codebook_size, h]),
    }
}

fn encode_tape(
    tape: &mut Tape<f32>,
    net: &VqNet<Var>,
    x: Var,
    heads: usize,
    segments: &[(usize, usize)],
) -> Var {
    match net {
        VqNet::Projection { encoder, .. } => tape.matmul(x, *encoder),
        VqNet::Transformer { encoder, enc_out, .. } => {
            let h = layers::encoder_forward(tape, encoder, x, heads, segments, ContextMode::full());
            layers::linear(tape, h, enc_out)
        }
    }
}

fn decode_tape(
    tape: &mut Tape<f32>,
    net: &VqNet<Var>,
    z: Var,
    heads: usize,
    segments: &[(usize, usize)],
) -> Var {
    match net {
        VqNet::Projection { decoder, .. } => layers::linear(tape, z, decoder),
        VqNet::Transformer { decoder, dec_out, .. } => {
            let h = layers::encoder_forward(tape, decoder, z, heads, segments, ContextMode::full());
            layers::linear(tape, h, dec_out)
        }
    }
}

/// Index of the nearest codebook row to each row of `z`; cosine when
/// `l2` is set. Ties go to the lowest index.
fn nearest_codes(z: &Tensor<f32>, codebook: &Tensor<f32>, l2: bool) -> Vec<usize> {
    let unit = |v: &[f32]| -> Vec<f64> {
        let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        v.iter().map(|&x| if n > 0.0 { x as f64 / n } else { 0.0 }).collect()
    };
    let codes: Vec<Vec<f64>> = (0..codebook.rows())
        .map(|i| {
            if l2 {
                unit(codebook.row(i))
            } else {
                codebook.row(i).iter().map(|&v| v as f64).collect()
            }
        })
        .collect();
    (0..z.rows())
        .map(|r| {
            let q: Vec<f64> = if l2 {
                unit(z.row(r))
            } else {
                z.row(r).iter().map(|&v| v as f64).collect()
            };
            let mut best = (0, f64::INFINITY);
            for (i, c) in codes.iter().enumerate() {
                let dist: f64 = c.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.1 {
                    best = (i, dist);
                }
            }
            best.0
        })
        .collect()
}

fn check_corpus(corpus: &[FeatureSequence]) -> Result<usize> {
    let d = corpus
        .first()
        .ok_or_else(|| Error::InvalidInput("vq-vae training corpus is empty".into()))?
        .dim();
    if corpus.iter().any(|s| s.dim() != d) {
        return Err(shape_err!("vq-vae corpus has mixed frame dims"));
    }
    Ok(d)
}

/// Trains a VQ-VAE on stacked, normalized sequences with reconstruction,
/// codebook and commitment losses and a straight-through estimator.
pub fn train_vqvae(
    variant: VqVariant,
    corpus: &[FeatureSequence],
    config: &VqVaeConfig,
    seed: u64,
) -> Result<(VqVaeQuantizer, VqTrainReport)> {
    config.validate()?;
    let d = check_corpus(corpus)?;
    let heads = config.transformer.num_heads;
    let mut params = init_params(variant, d, config, seed);
    let mut batches = rng::rng(seed, "vqvae-batches");

    // Seed the codebook with encoder outputs of randomly chosen frames so no
    // code starts out of reach.
    {
        let idx: Vec<usize> = (0..config.batch_size.max(8))
            .map(|_| batches.random_range(0..corpus.len()))
            .collect();
        let parts: Vec<Tensor<f32>> = idx.iter().map(|&i| corpus[i].frames().clone()).collect();
        let (x, segments) = layers::concat_rows(&parts);
        let mut tape = Tape::new();
        let net = layers::bind_frozen(&mut tape, &params);
        let x = tape.constant(x);
        let z = encode_tape(&mut tape, &net.net, x, heads, &segments);
        let z = tape.value(z);
        let mut pick = rng::rng(seed, "vqvae-codebook");
        let cb = params.codebook.data_mut();
        let h = config.code_dim;
        for i in 0..config.codebook_size {
            let row = pick.random_range(0..z.rows());
            for j in 0..h {
                cb[i * h + j] = z.row(row)[j] + rng::normal::<f32>(&mut pick, 0.01);
            }
        }
    }

    let mut adam = AdamState::new(params.slots(), AdamHyper::default());
    let mut report = VqTrainReport {
        losses: Vec::with_capacity(config.steps),
        reconstruction: Vec::with_capacity(config.steps),
    };
    for step in 1..=config.steps {
        let parts: Vec<Tensor<f32>> = (0..config.batch_size)
            .map(|_| corpus[batches.random_range(0..corpus.len())].frames().clone())
            .collect();
        let (x_val, segments) = layers::concat_rows(&parts);
        let mut tape = Tape::new();
        let vars = bind(&mut tape, &params);
        let x = tape.constant(x_val.clone());
        let z_e = encode_tape(&mut tape, &vars.net, x, heads, &segments);
        let ids = nearest_codes(tape.value(z_e), &params.codebook, config.l2_normalize);
        let c = tape.embedding(vars.codebook, &ids);
        let c_val = tape.value(c).clone();
        let z_q = tape.straight_through(z_e, c_val.clone());
        let y = decode_tape(&mut tape, &vars.net, z_q, heads, &segments);

        let recon = mse_node(&mut tape, y, &x_val, 1.0);
        let z_val = tape.value(z_e).clone();
        let codebook = mse_node(&mut tape, c, &z_val, 1.0);
        let commit = mse_node(&mut tape, z_e, &c_val, config.commitment);
        let total = tape.weighted_sum(&[(recon, 1.0), (codebook, 1.0), (commit, 1.0)]);
        let loss = tape.value(total).item() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "vq-vae loss".into(),
            });
        }
        report.losses.push(loss);
        report.reconstruction.push(tape.value(recon).item() as f64);
        let mut grads = tape.backward(total);
        let g = layers::collect_grads(&mut grads, &vars, &params);
        let grefs: Vec<&Tensor<f32>> = g.iter().collect();
        let mut slots = params.slots_mut();
        adam_step(&mut slots, &grefs, &mut adam, config.learning_rate)?;
    }
    Ok((
        VqVaeQuantizer {
            variant,
            input_dim: d,
            config: config.clone(),
            seed,
            params,
        },
        report,
    ))
}

/// `weight * mean((value(v) - target)^2)` with its gradient w.r.t. `v`.
fn mse_node(tape: &mut Tape<f32>, v: Var, target: &Tensor<f32>, weight: f64) -> Var {
    let val = tape.value(v);
    let n = val.len() as f64;
    let mut sum = 0.0f64;
    let mut grad = Vec::with_capacity(val.len());
    for (&a, &b) in val.data().iter().zip(target.data()) {
        let diff = a as f64 - b as f64;
        sum += diff * diff;
        grad.push((2.0 * weight * diff / n) as f32);
    }
    let g = Tensor::from_parts(val.shape().to_vec(), grad);
    tape.scalar_with_partials((weight * sum / n) as f32, vec![(v, g)])
}

impl VqVaeQuantizer {
    /// Correctly shaped placeholder parameters for a stored configuration.
    pub(crate) fn skeleton(variant: VqVariant, input_dim: usize, config: &VqVaeConfig) -> VqParams<Tensor<f32>> {
        init_params(variant, input_dim, config, 0)
    }

    pub(crate) fn from_parts(
        variant: VqVariant,
        input_dim: usize,
        config: VqVaeConfig,
        seed: u64,
        params: VqParams<Tensor<f32>>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = init_params(variant, input_dim, &config, seed);
        let ok = expected.slots().len() == params.slots().len()
            && expected
                .slots()
                .iter()
                .zip(params.slots())
                .all(|(a, b)| a.shape() == b.shape());
        if !ok {
            return Err(shape_err!("vq-vae tensors do not match the stored configuration"));
        }
        Ok(Self {
            variant,
            input_dim,
            config,
            seed,
            params,
        })
    }

    pub fn variant(&self) -> VqVariant {
        self.variant
    }

    pub fn config(&self) -> &VqVaeConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &VqParams<Tensor<f32>> {
        &self.params
    }

    pub fn codebook(&self) -> &Tensor<f32> {
        &self.params.codebook
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    /// Encoder outputs `[T, h]` for one stacked sequence.
    pub fn encode(&self, seq: &FeatureSequence) -> Result<Tensor<f32>> {
        if seq.dim() != self.input_dim {
            return Err(shape_err!(
                "vq-vae expects frames of dim {}, got {}",
                self.input_dim,
                seq.dim()
            ));
        }
        let mut tape = Tape::new();
        let vars = layers::bind_frozen(&mut tape, &self.params);
        let x = tape.constant(seq.frames().clone());
        let z = encode_tape(&mut tape, &vars.net, x, self.config.transformer.num_heads, &[(0, seq.len())]);
        Ok(tape.value(z).clone())
    }

    /// Mean squared reconstruction error of one sequence through the
    /// quantization bottleneck.
    pub fn reconstruction_error(&self, seq: &FeatureSequence) -> Result<f64> {
        let z = self.encode(seq)?;
        let ids = nearest_codes(&z, &self.params.codebook, self.config.l2_normalize);
        let mut tape = Tape::new();
        let vars = layers::bind_frozen(&mut tape, &self.params);
        let c = tape.embedding(vars.codebook, &ids);
        let y = decode_tape(&mut tape, &vars.net, c, self.config.transformer.num_heads, &[(0, seq.len())]);
        let y = tape.value(y);
        let n = y.len() as f64;
        Ok(y.data()
            .iter()
            .zip(seq.frames().data())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            / n)
    }

    pub fn quantize_sequence(&self, seq: &FeatureSequence) -> Result<Vec<usize>> {
        let z = self.encode(seq)?;
        Ok(nearest_codes(&z, &self.params.codebook, self.config.l2_normalize))
    }
}

/// Label of a single stacked frame, encoded as a length-1 sequence.
pub fn vqvae_quantize(vq: &VqVaeQuantizer, x: &[f32]) -> Result<usize> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantizer input".into()));
    }
    let seq = FeatureSequence::from_rows(1, x.len(), x.to_vec(), 10.0)?;
    Ok(vq.quantize_sequence(&seq)?[0])
}

impl SequenceLabeler for VqVaeQuantizer {
    fn vocab_size(&self) -> usize {
        self.config.codebook_size
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn label_sequence(&self, stacked: &FeatureSequence) -> Result<Vec<Option<usize>>> {
        Ok(self.quantize_sequence(stacked)?.into_iter().map(Some).collect())
    }
}
