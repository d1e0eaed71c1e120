use super::config::{ContextMode, EncoderConfig};
use super::layers::{self, bind, init_linear, init_trunk, Encoder, Linear, ParamTree};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::rng;

/// Encoder body plus a linear head over the label vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet<T> {
    pub body: Encoder<T>,
    pub head: Linear<T>,
}

impl<T> ParamTree<T> for EncoderNet<T> {
    type Mapped<U> = EncoderNet<U>;
    fn map_ref<U>(&self, f: &mut dyn FnMut(&T) -> U) -> EncoderNet<U> {
        EncoderNet {
            body: self.body.map_ref(f),
            head: self.head.map_ref(f),
        }
    }
    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a T)) {
        self.body.for_each(f);
        self.head.for_each(f);
    }
    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
        self.body.for_each_mut(f);
        self.head.for_each_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<F> {
    pub config: EncoderConfig,
    pub net: EncoderNet<Tensor<F>>,
}

pub fn init_body<F: Real>(cfg: &EncoderConfig) -> Result<Encoder<Tensor<F>>> {
    cfg.validate()?;
    let mut r = rng::rng(cfg.seed, "encoder-body");
    let input = init_linear(&mut r, cfg.input_dim, cfg.d_model);
    let trunk = init_trunk(&mut r, cfg.num_layers, cfg.d_model, cfg.ffn_dim);
    Ok(Encoder { input, trunk })
}

pub fn init_encoder<F: Real>(cfg: &EncoderConfig) -> Result<EncoderParams<F>> {
    let body = init_body(cfg)?;
    let head = init_linear(&mut rng::rng(cfg.seed, "encoder-head"), cfg.d_model, cfg.vocab_size);
    Ok(EncoderParams {
        config: cfg.clone(),
        net: EncoderNet { body, head },
    })
}

impl<F: Real> EncoderParams<F> {
    pub fn parameter_count(&self) -> usize {
        self.net.slots().iter().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        self.net.slots()
    }

    pub fn all_finite(&self) -> bool {
        self.net.slots().iter().all(|t| t.all_finite())
    }

    pub fn cast<G: Real>(&self) -> EncoderParams<G> {
        EncoderParams {
            config: self.config.clone(),
            net: self.net.map_ref(&mut |t| t.cast()),
        }
    }
}

pub(crate) fn check_inputs<F: Real>(inputs: &[&Tensor<F>], dim: usize) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for x in inputs {
        if x.shape().len() != 2 || x.cols() != dim || x.rows() == 0 {
            return Err(shape_err!("encoder expects [T>0, {dim}] input, got {:?}", x.shape()));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("encoder input".into()));
        }
    }
    Ok(())
}

/// Records the batched forward pass; returns the per-row logits and the
/// segment table.
pub fn forward_tape<F: Real>(
    tape: &mut Tape<F>,
    net: &EncoderNet<Var>,
    cfg: &EncoderConfig,
    inputs: &[&Tensor<F>],
    mode: ContextMode,
) -> Result<(Var, Vec<(usize, usize)>)> {
    check_inputs(inputs, cfg.input_dim)?;
    mode.validate()?;
    let owned: Vec<Tensor<F>> = inputs.iter().map(|t| (*t).clone()).collect();
    let (x, segments) = layers::concat_rows(&owned);
    let x = tape.constant(x);
    let h = layers::encoder_forward(tape, &net.body, x, cfg.num_heads, &segments, mode);
    let logits = layers::linear(tape, h, &net.head);
    Ok((logits, segments))
}

/// Logits `[T', vocab]` for one utterance under `mode`.
pub fn forward<F: Real>(params: &EncoderParams<F>, features: &Tensor<F>, mode: ContextMode) -> Result<Tensor<F>> {
    let mut out = forward_batch(params, &[features], mode)?;
    Ok(out.remove(0))
}

/// Batched forward; utterances never attend to each other.
pub fn forward_batch<F: Real>(
    params: &EncoderParams<F>,
    inputs: &[&Tensor<F>],
    mode: ContextMode,
) -> Result<Vec<Tensor<F>>> {
    let mut tape = Tape::new();
    let net = layers::bind_frozen(&mut tape, &params.net);
    let (logits, segments) = forward_tape(&mut tape, &net, &params.config, inputs, mode)?;
    Ok(split_rows(tape.value(logits), &segments))
}

pub(crate) fn split_rows<F: Real>(t: &Tensor<F>, segments: &[(usize, usize)]) -> Vec<Tensor<F>> {
    let c = t.cols();
    segments
        .iter()
        .map(|&(s, l)| Tensor::from_parts(vec![l, c], t.data()[s * c..(s + l) * c].to_vec()))
        .collect()
}

/// Binds trainable parameters; helper kept next to `forward_tape` so callers
/// need only this module.
pub fn bind_params<F: Real>(tape: &mut Tape<F>, params: &EncoderParams<F>) -> EncoderNet<Var> {
    bind(tape, &params.net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: ContextMode) -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            d_model: 8,
            num_heads: 2,
            ffn_dim: 16,
            input_dim: 6,
            vocab_size: 5,
            context_mode: mode,
            seed: 3,
        }
    }

    fn input(t: usize, seed: u64) -> Tensor<f64> {
        rng::standard_normal(&mut rng::rng(seed, "in"), &[t, 6])
    }

    #[test]
    fn closed_form_parameter_count() {
        let cfg = tiny(ContextMode::full());
        let p: EncoderParams<f32> = init_encoder(&cfg).unwrap();
        assert_eq!(p.parameter_count(), cfg.parameter_count());
        let big = EncoderConfig::default();
        let p: EncoderParams<f32> = init_encoder(&big).unwrap();
        assert_eq!(p.parameter_count(), big.parameter_count());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = tiny(ContextMode::full());
        let a: EncoderParams<f32> = init_encoder(&cfg).unwrap();
        let b: EncoderParams<f32> = init_encoder(&cfg).unwrap();
        assert_eq!(a, b);
        let c: EncoderParams<f32> = init_encoder(&EncoderConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = EncoderConfig {
            num_heads: 3,
            ..tiny(ContextMode::full())
        };
        assert!(matches!(init_encoder::<f32>(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn single_frame_is_mode_independent() {
        let p: EncoderParams<f64> = init_encoder(&tiny(ContextMode::full())).unwrap();
        let x = input(1, 1);
        let full = forward(&p, &x, ContextMode::full()).unwrap();
        let causal = forward(&p, &x, ContextMode::causal(Some(4))).unwrap();
        let look = forward(&p, &x, ContextMode::causal_lookahead(None, 3)).unwrap();
        assert_eq!(full, causal);
        assert_eq!(full, look);
    }

    #[test]
    fn batch_items_are_independent() {
        let p: EncoderParams<f64> = init_encoder(&tiny(ContextMode::full())).unwrap();
        let (x, y) = (input(7, 1), input(4, 2));
        let alone = forward(&p, &x, ContextMode::full()).unwrap();
        let both = forward_batch(&p, &[&x, &y, &x], ContextMode::full()).unwrap();
        assert!(both[0].max_abs_diff(&alone) < 1e-12);
        assert_eq!(both[0], both[2]);
        assert_eq!(both[1].shape(), &[4, 5]);
    }

    #[test]
    fn wrong_input_dim() {
        let p: EncoderParams<f64> = init_encoder(&tiny(ContextMode::full())).unwrap();
        let x: Tensor<f64> = Tensor::zeros(&[3, 5]);
        assert!(matches!(forward(&p, &x, ContextMode::full()), Err(Error::ShapeMismatch(_))));
    }
}
