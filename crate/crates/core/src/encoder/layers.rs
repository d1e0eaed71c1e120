//! Transformer building blocks, generic over what sits at each parameter
//! slot: `Tensor<F>` for stored weights, `Var` while recording a forward pass
//! on a tape.

use super::config::ContextMode;
use crate::numerics::{Real, Segments, Tape, Tensor, Var};
use crate::rng::{self, DetRng};

/// Structural traversal over every parameter slot in a fixed order. The
/// order defines checkpoint layout and optimizer slot assignment.
pub trait ParamTree<T> {
    type Mapped<U>;

    fn map_ref<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Self::Mapped<U>;
    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a T));
    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T));

    fn slots(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.for_each(&mut |t| out.push(t));
        out
    }

    fn slots_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.for_each_mut(&mut |t| out.push(t));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm<T> {
    pub gamma: T,
    pub beta: T,
}

/// Pre-norm residual block: attention then feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub attn_norm: Norm<T>,
    /// Fused, bias-free `[d, 3d]` query/key/value projection.
    pub qkv: T,
    pub attn_out: Linear<T>,
    pub ffn_norm: Norm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trunk<T> {
    pub blocks: Vec<Block<T>>,
    pub final_norm: Norm<T>,
}

/// Input projection followed by the transformer trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub input: Linear<T>,
    pub trunk: Trunk<T>,
}

impl<T> ParamTree<T> for Linear<T> {
    type Mapped<U> = Linear<U>;
    fn map_ref<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a T)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

impl<T> ParamTree<T> for Norm<T> {
    type Mapped<U> = Norm<U>;
    fn map_ref<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Norm<U> {
        Norm {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
        }
    }
    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a T)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

impl<T> ParamTree<T> for Block<T> {
    type Mapped<U> = Block<U>;
    fn map_ref<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Block<U> {
        Block {
            attn_norm: self.attn_norm.map_ref(f),
            qkv: f(&self.qkv),
            attn_out: self.attn_out.map_ref(f),
            ffn_norm: self.ffn_norm.map_ref(f),
            ffn_in: self.ffn_in.map_ref(f),
            ffn_out: self.ffn_out.map_ref(f),
        }
    }
    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a T)) {
        self.attn_norm.for_each(f);
        f(&self.qkv);
        self.attn_out.for_each(f);
        self.ffn_norm.for_each(f);
        self.ffn_in.for_each(f);
        self.ffn_out.for_each(f);
    }
    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
        self.attn_norm.for_each_mut(f);
        f(&mut self.qkv);
        self.attn_out.for_each_mut(f);
        self.ffn_norm.for_each_mut(f);
        self.ffn_in.for_each_mut(f);
        self.ffn_out.for_each_mut(f);
    }
}

impl<T> ParamTree<T> for Trunk<T> {
    type Mapped<U> = Trunk<U>;
    fn map_ref<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Trunk<U> {
        Trunk {
            blocks: self.blocks.iter().map(|b| b.map_ref(f)).collect(),
            final_norm: self.final_norm.map_ref(f),
        }
    }
    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a T)) {
        for b in &self.blocks {
            b.for_each(f);
        }
        self.final_norm.for_each(f);
    }
    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
        for b in &mut self.blocks {
            b.for_each_mut(f);
        }
        self.final_norm.for_each_mut(f);
    }
}

impl<T> ParamTree<T> for Encoder<T> {
    type Mapped<U> = Encoder<U>;
    fn map_ref<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Encoder<U> {
        Encoder {
            input: self.input.map_ref(f),
            trunk: self.trunk.map_ref(f),
        }
    }
    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a T)) {
        self.input.for_each(f);
        self.trunk.for_each(f);
    }
    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut T)) {
        self.input.for_each_mut(f);
        self.trunk.for_each_mut(f);
    }
}

pub fn init_linear<F: Real>(r: &mut DetRng, fan_in: usize, fan_out: usize) -> Linear<Tensor<F>> {
    Linear {
        weight: rng::xavier_uniform(r, &[fan_in, fan_out], fan_in, fan_out),
        bias: Tensor::zeros(&[fan_out]),
    }
}

pub fn init_norm<F: Real>(d: usize) -> Norm<Tensor<F>> {
    Norm {
        gamma: Tensor::full(&[d], F::one()),
        beta: Tensor::zeros(&[d]),
    }
}

pub fn init_trunk<F: Real>(r: &mut DetRng, layers: usize, d: usize, ffn: usize) -> Trunk<Tensor<F>> {
    let blocks = (0..layers)
        .map(|_| Block {
            attn_norm: init_norm(d),
            qkv: rng::xavier_uniform(r, &[d, 3 * d], d, d),
            attn_out: init_linear(r, d, d),
            ffn_norm: init_norm(d),
            ffn_in: init_linear(r, d, ffn),
            ffn_out: init_linear(r, ffn, d),
        })
        .collect();
    Trunk {
        blocks,
        final_norm: init_norm(d),
    }
}

/// Registers every tensor of a parameter tree as a trainable leaf.
pub fn bind<F: Real, P>(tape: &mut Tape<F>, params: &P) -> P::Mapped<Var>
where
    P: ParamTree<Tensor<F>>,
{
    params.map_ref(&mut |t| tape.param(t.clone()))
}

/// Registers a parameter tree as constants (no gradients).
pub fn bind_frozen<F: Real, P>(tape: &mut Tape<F>, params: &P) -> P::Mapped<Var>
where
    P: ParamTree<Tensor<F>>,
{
    params.map_ref(&mut |t| tape.constant(t.clone()))
}

/// Collects the gradient of every slot in `vars`, zeros where a slot did not
/// reach the loss.
pub fn collect_grads<F: Real, PV, PT>(grads: &mut crate::numerics::Gradients<F>, vars: &PV, like: &PT) -> Vec<Tensor<F>>
where
    PV: ParamTree<Var>,
    PT: ParamTree<Tensor<F>>,
{
    vars.slots()
        .into_iter()
        .zip(like.slots())
        .map(|(v, t)| grads.take_or_zeros(*v, t))
        .collect()
}

pub fn linear<F: Real>(tape: &mut Tape<F>, x: Var, l: &Linear<Var>) -> Var {
    tape.linear(x, l.weight, l.bias)
}

/// Sinusoidal position table for the rows of a segmented batch; positions
/// restart at 0 in each segment.
pub fn positional_encoding<F: Real>(segments: &Segments, d: usize) -> Tensor<F> {
    let n: usize = segments.iter().map(|&(s, l)| s + l).max().unwrap_or(0);
    let mut out = Tensor::zeros(&[n, d]);
    for &(start, len) in segments {
        for pos in 0..len {
            let row = out.row_mut(start + pos);
            for i in 0..d {
                let pair = (i / 2) as f64;
                let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
                row[i] = F::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() });
            }
        }
    }
    out
}

pub fn trunk_forward<F: Real>(
    tape: &mut Tape<F>,
    trunk: &Trunk<Var>,
    mut h: Var,
    heads: usize,
    segments: &Segments,
    mode: ContextMode,
) -> Var {
    for (i, b) in trunk.blocks.iter().enumerate() {
        let a = tape.layer_norm(h, b.attn_norm.gamma, b.attn_norm.beta);
        let qkv = tape.matmul(a, b.qkv);
        let att = tape.attention(qkv, heads, segments, mode.layer_window(i));
        let att = linear(tape, att, &b.attn_out);
        h = tape.add(h, att);
        let f = tape.layer_norm(h, b.ffn_norm.gamma, b.ffn_norm.beta);
        let f = linear(tape, f, &b.ffn_in);
        let f = tape.gelu(f);
        let f = linear(tape, f, &b.ffn_out);
        h = tape.add(h, f);
    }
    tape.layer_norm(h, trunk.final_norm.gamma, trunk.final_norm.beta)
}

/// Input projection, positional encoding, then the trunk.
pub fn encoder_forward<F: Real>(
    tape: &mut Tape<F>,
    enc: &Encoder<Var>,
    x: Var,
    heads: usize,
    segments: &Segments,
    mode: ContextMode,
) -> Var {
    let h = linear(tape, x, &enc.input);
    let d = tape.value(h).cols();
    let pe = tape.constant(positional_encoding(segments, d));
    let h = tape.add(h, pe);
    trunk_forward(tape, &enc.trunk, h, heads, segments, mode)
}

/// Stacks per-utterance matrices into one batch matrix and returns the
/// segment table.
pub fn concat_rows<F: Real>(parts: &[Tensor<F>]) -> (Tensor<F>, Vec<(usize, usize)>) {
    let cols = parts.first().map_or(0, |p| p.cols());
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    let mut segments = Vec::with_capacity(parts.len());
    let mut start = 0;
    for p in parts {
        debug_assert_eq!(p.cols(), cols);
        data.extend_from_slice(p.data());
        segments.push((start, p.rows()));
        start += p.rows();
    }
    (Tensor::from_parts(vec![start, cols], data), segments)
}
