//! Reverse-mode differentiation over a recorded operation list.
//!
//! The forward pass appends nodes; `backward` walks them in reverse once.
//! Loss-style operations (cross-entropy, CTC, VQ terms) compute their own
//! partial derivatives during the forward pass and register them through
//! [`Tape::scalar_with_partials`], which keeps the op set small.

use super::tensor::{gemm, softmax_in_place, MatMut, MatRef, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which keys a query row may attend to, relative to its own index.
/// `None` means unlimited on that side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnWindow {
    pub left: Option<usize>,
    pub right: Option<usize>,
}

impl AttnWindow {
    pub const FULL: AttnWindow = AttnWindow {
        left: None,
        right: None,
    };

    /// Inclusive key range visible from query `i` in a segment of length `len`.
    #[inline]
    pub fn range(&self, i: usize, len: usize) -> (usize, usize) {
        let lo = self.left.map_or(0, |l| i.saturating_sub(l));
        let hi = self.right.map_or(len - 1, |r| (i + r).min(len - 1));
        (lo, hi)
    }
}

/// Contiguous row ranges `(start, len)` that form independent sequences
/// inside a batched matrix.
pub type Segments = [(usize, usize)];

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Gelu(Var),
    Attention {
        qkv: Var,
        heads: usize,
        segments: Vec<(usize, usize)>,
        probs: Vec<F>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    StraightThrough(Var),
    ScalarPartials(Vec<(Var, Tensor<F>)>),
    WeightedSum(Vec<(Var, F)>),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

const LN_EPS: f64 = 1e-5;

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, w: Var) -> Var {
        let out = self
            .value(a)
            .matmul(self.value(w))
            .expect("matmul operand shapes");
        let rg = self.rg(a) || self.rg(w);
        self.push(out, Op::MatMul(a, w), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add operand shapes");
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Adds a `[m]` bias to every row of `[n, m]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        assert_eq!(out.cols(), bias.len(), "bias width");
        for row in out.data_mut().chunks_mut(bias.len()) {
            for (v, &bv) in row.iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddBias(x, b), rg)
    }

    /// `x W + b` for a `[k, m]` weight and `[m]` bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let rows = xv.rows();
        let g = self.value(gamma).data();
        let bta = self.value(beta).data();
        let eps = F::from_f64(LN_EPS);
        let inv_n = F::one() / F::from_f64(cols as f64);
        let mut xhat = vec![F::zero(); xv.len()];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<F>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_n;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let xh = (row[c] - mean) * rs;
                xhat[r * cols + c] = xh;
                out[r * cols + c] = xh * g[c] + bta[c];
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu_value);
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Multi-head scaled dot-product attention over a fused `[n, 3d]`
    /// query/key/value matrix. Each segment attends only within itself and
    /// within `window`.
    pub fn attention(&mut self, qkv: Var, heads: usize, segments: &Segments, window: AttnWindow) -> Var {
        let qv = self.value(qkv);
        let n = qv.rows();
        let d3 = qv.cols();
        assert_eq!(d3 % 3, 0, "fused qkv width");
        let d = d3 / 3;
        assert_eq!(d % heads, 0, "heads divide model width");
        let dh = d / heads;
        let scale = F::one() / F::from_f64(dh as f64).sqrt();
        let total: usize = segments.iter().map(|&(_, l)| heads * l * l).sum();
        let mut probs = vec![F::zero(); total];
        let mut out = vec![F::zero(); n * d];
        let data = qv.data();
        let mut p_off = 0;
        for &(start, len) in segments {
            if len == 0 {
                continue;
            }
            assert!(start + len <= n, "segment out of range");
            for h in 0..heads {
                let q = strided(data, start * d3 + h * dh, len, dh, d3);
                let k = strided(data, start * d3 + d + h * dh, len, dh, d3);
                let v = strided(data, start * d3 + 2 * d + h * dh, len, dh, d3);
                let p = &mut probs[p_off..p_off + len * len];
                gemm(scale, q, k.t(), F::zero(), MatMut::dense(p, len, len));
                for i in 0..len {
                    let (lo, hi) = window.range(i, len);
                    let row = &mut p[i * len..(i + 1) * len];
                    for (j, s) in row.iter_mut().enumerate() {
                        if j < lo || j > hi {
                            *s = F::NEG_INFINITY;
                        }
                    }
                    softmax_in_place(row);
                }
                gemm(
                    F::one(),
                    MatRef::dense(p, len, len),
                    v,
                    F::zero(),
                    MatMut {
                        data: &mut out,
                        offset: start * d + h * dh,
                        rows: len,
                        cols: dh,
                        row_stride: d,
                    },
                );
                p_off += len * len;
            }
        }
        let out = Tensor::from_parts(vec![n, d], out);
        let rg = self.rg(qkv);
        self.push(
            out,
            Op::Attention {
                qkv,
                heads,
                segments: segments.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Row lookup `table[ids[i]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.cols();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            out.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), cols], out);
        let rg = self.rg(table);
        self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Forward value `value`, backward identity into `x`.
    pub fn straight_through(&mut self, x: Var, value: Tensor<F>) -> Var {
        assert_eq!(self.value(x).shape(), value.shape());
        let rg = self.rg(x);
        self.push(value, Op::StraightThrough(x), rg)
    }

    /// Scalar node whose partial derivatives w.r.t. `partials` inputs were
    /// computed by the caller.
    pub fn scalar_with_partials(&mut self, value: F, partials: Vec<(Var, Tensor<F>)>) -> Var {
        for (v, g) in &partials {
            assert_eq!(self.value(*v).shape(), g.shape(), "partial shape");
        }
        let rg = partials.iter().any(|(v, _)| self.rg(*v));
        self.push(Tensor::scalar(value), Op::ScalarPartials(partials), rg)
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Var {
        let mut total = F::zero();
        for &(v, w) in terms {
            total += self.value(v).item() * w;
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// Gradients of the scalar `loss` w.r.t. every node that requires them.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), F::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, w) => {
                let (av, wv) = (self.value(*a), self.value(*w));
                if self.rg(*a) {
                    let mut da = vec![F::zero(); av.len()];
                    gemm(
                        F::one(),
                        g.as_mat(),
                        wv.as_mat().t(),
                        F::zero(),
                        MatMut::dense(&mut da, av.rows(), av.cols()),
                    );
                    accumulate(grads, *a, av.shape(), da);
                }
                if self.rg(*w) {
                    let mut dw = vec![F::zero(); wv.len()];
                    gemm(
                        F::one(),
                        av.as_mat().t(),
                        g.as_mat(),
                        F::zero(),
                        MatMut::dense(&mut dw, wv.rows(), wv.cols()),
                    );
                    accumulate(grads, *w, wv.shape(), dw);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        accumulate(grads, v, g.shape(), g.data().to_vec());
                    }
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    accumulate(grads, *x, g.shape(), g.data().to_vec());
                }
                if self.rg(*b) {
                    let cols = g.cols();
                    let mut db = vec![F::zero(); cols];
                    for row in g.data().chunks(cols) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, self.value(*b).shape(), db);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = g.cols();
                let rows = g.rows();
                let gam = self.value(*gamma).data();
                let mut dgam = vec![F::zero(); cols];
                let mut dbeta = vec![F::zero(); cols];
                let mut dx = vec![F::zero(); g.len()];
                let inv_n = F::one() / F::from_f64(cols as f64);
                let mut dxhat = vec![F::zero(); cols];
                for r in 0..rows {
                    let gr = g.row(r);
                    let xh = &xhat[r * cols..(r + 1) * cols];
                    let mut mean_dxh = F::zero();
                    let mut mean_dxh_xh = F::zero();
                    for c in 0..cols {
                        dgam[c] += gr[c] * xh[c];
                        dbeta[c] += gr[c];
                        dxhat[c] = gr[c] * gam[c];
                        mean_dxh += dxhat[c];
                        mean_dxh_xh += dxhat[c] * xh[c];
                    }
                    mean_dxh *= inv_n;
                    mean_dxh_xh *= inv_n;
                    for c in 0..cols {
                        dx[r * cols + c] = rstd[r] * (dxhat[c] - mean_dxh - xh[c] * mean_dxh_xh);
                    }
                }
                if self.rg(*x) {
                    accumulate(grads, *x, g.shape(), dx);
                }
                if self.rg(*gamma) {
                    accumulate(grads, *gamma, self.value(*gamma).shape(), dgam);
                }
                if self.rg(*beta) {
                    accumulate(grads, *beta, self.value(*beta).shape(), dbeta);
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| gv * gelu_grad(v))
                    .collect();
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::Attention {
                qkv,
                heads,
                segments,
                probs,
            } => self.attention_backward(*qkv, *heads, segments, probs, g, grads),
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let cols = tv.cols();
                let mut dt = vec![F::zero(); tv.len()];
                for (i, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        dt[id * cols + c] += g.data()[i * cols + c];
                    }
                }
                accumulate(grads, *table, tv.shape(), dt);
            }
            Op::StraightThrough(x) => {
                accumulate(grads, *x, g.shape(), g.data().to_vec());
            }
            Op::ScalarPartials(parts) => {
                let s = g.item();
                for (v, p) in parts {
                    if self.rg(*v) {
                        accumulate(grads, *v, p.shape(), p.data().iter().map(|&x| x * s).collect());
                    }
                }
            }
            Op::WeightedSum(terms) => {
                let s = g.item();
                for &(v, w) in terms {
                    if self.rg(v) {
                        accumulate(grads, v, self.value(v).shape(), vec![s * w]);
                    }
                }
            }
        }
    }

    fn attention_backward(
        &self,
        qkv: Var,
        heads: usize,
        segments: &[(usize, usize)],
        probs: &[F],
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) {
        let qv = self.value(qkv);
        let d3 = qv.cols();
        let d = d3 / 3;
        let dh = d / heads;
        let scale = F::one() / F::from_f64(dh as f64).sqrt();
        let data = qv.data();
        let gd = g.data();
        let mut dqkv = vec![F::zero(); qv.len()];
        let mut p_off = 0;
        let max_len = segments.iter().map(|&(_, l)| l).max().unwrap_or(0);
        let mut dp = vec![F::zero(); max_len * max_len];
        for &(start, len) in segments {
            if len == 0 {
                continue;
            }
            for h in 0..heads {
                let p = &probs[p_off..p_off + len * len];
                let q = strided(data, start * d3 + h * dh, len, dh, d3);
                let k = strided(data, start * d3 + d + h * dh, len, dh, d3);
                let v = strided(data, start * d3 + 2 * d + h * dh, len, dh, d3);
                let go = strided(gd, start * d + h * dh, len, dh, d);
                let dp = &mut dp[..len * len];
                // dP = dO V^T
                gemm(F::one(), go, v.t(), F::zero(), MatMut::dense(dp, len, len));
                // dS = P * (dP - rowsum(dP * P))
                for i in 0..len {
                    let pr = &p[i * len..(i + 1) * len];
                    let dr = &mut dp[i * len..(i + 1) * len];
                    let dot: F = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                    for (x, &pv) in dr.iter_mut().zip(pr) {
                        *x = pv * (*x - dot);
                    }
                }
                let ds = MatRef::dense(&dp[..], len, len);
                // dQ = scale dS K
                gemm(
                    scale,
                    ds,
                    k,
                    F::zero(),
                    MatMut {
                        data: &mut dqkv,
                        offset: start * d3 + h * dh,
                        rows: len,
                        cols: dh,
                        row_stride: d3,
                    },
                );
                // dK = scale dS^T Q
                gemm(
                    scale,
                    ds.t(),
                    q,
                    F::zero(),
                    MatMut {
                        data: &mut dqkv,
                        offset: start * d3 + d + h * dh,
                        rows: len,
                        cols: dh,
                        row_stride: d3,
                    },
                );
                // dV = P^T dO
                gemm(
                    F::one(),
                    MatRef::dense(p, len, len).t(),
                    go,
                    F::zero(),
                    MatMut {
                        data: &mut dqkv,
                        offset: start * d3 + 2 * d + h * dh,
                        rows: len,
                        cols: dh,
                        row_stride: d3,
                    },
                );
                p_off += len * len;
            }
        }
        accumulate(grads, qkv, qv.shape(), dqkv);
    }
}

fn strided<F: Real>(data: &[F], offset: usize, rows: usize, cols: usize, row_stride: usize) -> MatRef<'_, F> {
    MatRef {
        data,
        offset,
        rows,
        cols,
        row_stride,
        col_stride: 1,
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Tensor<F>>], v: Var, shape: &[usize], delta: Vec<F>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), delta)),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[inline]
fn gelu_value<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let k = F::from_f64(GELU_K);
    let half = F::from_f64(0.5);
    half * x * (F::one() + tanh_via_exp(c * (x + k * x * x * x)))
}

/// `tanh` through a single `exp`; several times cheaper than the libm call
/// and accurate to a few ulps in absolute terms, which is all GELU needs.
#[inline]
fn tanh_via_exp<F: Real>(x: F) -> F {
    let limit = F::from_f64(20.0);
    if x > limit {
        return F::one();
    }
    if x < -limit {
        return -F::one();
    }
    let e = (x + x).exp();
    (e - F::one()) / (e + F::one())
}

#[inline]
fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let k = F::from_f64(GELU_K);
    let half = F::from_f64(0.5);
    let t = tanh_via_exp(c * (x + k * x * x * x));
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::from_f64(3.0) * k * x * x)
}

pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the loss.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor<F>) -> Tensor<F> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_gradients_match_hand_values() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 1], &[3.0, 4.0]));
        let y = tape.matmul(a, w);
        let loss = tape.scalar_with_partials(tape.value(y).item(), vec![(y, t(&[1, 1], &[1.0]))]);
        let g = tape.backward(loss);
        assert_eq!(g.get(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1, 1], &[2.0]));
        let w = tape.param(t(&[1, 1], &[5.0]));
        let y = tape.matmul(a, w);
        let loss = tape.scalar_with_partials(0.0, vec![(y, t(&[1, 1], &[1.0]))]);
        let g = tape.backward(loss);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[2.0]);
    }

    #[test]
    fn causal_window_ranges() {
        let w = AttnWindow {
            left: Some(2),
            right: Some(0),
        };
        assert_eq!(w.range(0, 5), (0, 0));
        assert_eq!(w.range(4, 5), (2, 4));
        let la = AttnWindow {
            left: None,
            right: Some(3),
        };
        assert_eq!(la.range(1, 5), (0, 4));
        assert_eq!(AttnWindow::FULL.range(2, 5), (0, 4));
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (gelu_value(x + h) - gelu_value(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
