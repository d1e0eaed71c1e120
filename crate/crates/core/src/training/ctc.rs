//! CTC loss over a blank-augmented lattice, greedy decoding and token error
//! rate. The blank is the last logit column.

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{log_add, log_sum_exp, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct CtcLoss<F> {
    /// Negative log-likelihood; `+inf` when the target cannot be aligned.
    pub loss: F,
    pub feasible: bool,
    /// d loss / d logits; all zero when infeasible.
    pub grad: Tensor<F>,
}

/// Frames needed to emit `target`: one per token plus one blank between
/// each pair of equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_softmax_rows<F: Real>(logits: &Tensor<F>) -> Vec<F> {
    let mut out = Vec::with_capacity(logits.len());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        out.extend(row.iter().map(|&x| x - lse));
    }
    out
}

/// Negative log of the total probability of all alignments of `target`
/// under per-frame softmax of `logits` (`[T, V + 1]`).
pub fn ctc_loss<F: Real>(logits: &Tensor<F>, target: &[usize]) -> Result<CtcLoss<F>> {
    if logits.shape().len() != 2 || logits.cols() < 2 {
        return Err(shape_err!("ctc logits must be [T, V+1] with V >= 1, got {:?}", logits.shape()));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("ctc logits".into()));
    }
    let (t_len, width) = (logits.rows(), logits.cols());
    let blank = width - 1;
    if let Some(&bad) = target.iter().find(|&&y| y >= blank) {
        return Err(invalid!("target token {bad} outside vocabulary of {blank}"));
    }
    if t_len < min_frames(target) {
        return Ok(CtcLoss {
            loss: F::INFINITY,
            feasible: false,
            grad: Tensor::zeros(logits.shape()),
        });
    }

    let lp = log_softmax_rows(logits);
    let at = |t: usize, k: usize| lp[t * width + k];
    // Extended label sequence: blank, y1, blank, y2, ..., blank.
    let s_len = 2 * target.len() + 1;
    let label = |s: usize| if s % 2 == 0 { blank } else { target[s / 2] };
    let skip_ok = |s: usize| s >= 2 && s % 2 == 1 && label(s) != label(s - 2);
    let ninf = F::NEG_INFINITY;

    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = at(0, blank);
    if s_len > 1 {
        alpha[1] = at(0, label(1));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if skip_ok(s) {
                a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = a + at(t, label(s));
        }
    }
    let last = (t_len - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }

    let mut beta = vec![ninf; t_len * s_len];
    beta[last + s_len - 1] = at(t_len - 1, label(s_len - 1));
    if s_len > 1 {
        beta[last + s_len - 2] = at(t_len - 1, label(s_len - 2));
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                b = log_add(b, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, beta[(t + 1) * s_len + s + 2]);
            }
            beta[t * s_len + s] = b + at(t, label(s));
        }
    }

    // d(-log p)/d logit[t,k] = softmax[t,k] - sum_{s: label(s)=k} alpha*beta / (p * y[t,k]).
    let mut grad = Tensor::zeros(logits.shape());
    let mut occ = vec![ninf; width];
    for t in 0..t_len {
        occ.iter_mut().for_each(|o| *o = ninf);
        for s in 0..s_len {
            let k = label(s);
            occ[k] = log_add(occ[k], alpha[t * s_len + s] + beta[t * s_len + s]);
        }
        let g = grad.row_mut(t);
        for k in 0..width {
            let soft = at(t, k).exp();
            let post = (occ[k] - at(t, k) - log_p).exp();
            g[k] = soft - post;
        }
    }
    Ok(CtcLoss {
        loss: -log_p,
        feasible: true,
        grad,
    })
}

/// Per-frame argmax, merge repeats, drop blanks (the last column).
pub fn greedy_ctc_decode<F: Real>(logits: &Tensor<F>) -> Vec<usize> {
    let blank = logits.cols().saturating_sub(1);
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let mut best = 0;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Total edit distance over total reference length.
pub fn token_error_rate(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(invalid!("{} hypotheses for {} references", hyps.len(), refs.len()));
    }
    let words: usize = refs.iter().map(Vec::len).sum();
    if words == 0 {
        return Err(Error::UndefinedMetric("token error rate over empty references".into()));
    }
    let edits: usize = hyps.iter().zip(refs).map(|(h, r)| edit_distance(h, r)).sum();
    Ok(edits as f64 / words as f64)
}
