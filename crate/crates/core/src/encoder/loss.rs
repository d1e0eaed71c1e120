use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{log_sum_exp, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedLoss<F> {
    /// Mean cross-entropy over masked positions; 0 when none are masked.
    pub loss: F,
    /// Top-1 accuracy over masked positions; `None` when none are masked.
    pub accuracy: Option<f64>,
    pub masked_positions: usize,
    /// d loss / d logits, exactly zero on unmasked rows.
    pub grad: Tensor<F>,
}

/// Cross-entropy of `logits` rows against `labels`, averaged over rows whose
/// `mask` entry is set. Labels on unmasked rows are never read.
pub fn masked_ce_loss<F: Real>(logits: &Tensor<F>, labels: &[usize], mask: &[bool]) -> Result<MaskedLoss<F>> {
    if logits.shape().len() != 2 {
        return Err(shape_err!("logits must be 2-d, got {:?}", logits.shape()));
    }
    let (t, v) = (logits.rows(), logits.cols());
    if labels.len() != t || mask.len() != t {
        return Err(shape_err!(
            "{t} logit rows but {} labels and {} mask entries",
            labels.len(),
            mask.len()
        ));
    }
    let count = mask.iter().filter(|&&m| m).count();
    let mut grad = Tensor::zeros(&[t, v]);
    if count == 0 {
        return Ok(MaskedLoss {
            loss: F::zero(),
            accuracy: None,
            masked_positions: 0,
            grad,
        });
    }
    let inv = F::from_f64(1.0 / count as f64);
    let mut total = F::zero();
    let mut correct = 0usize;
    for i in (0..t).filter(|&i| mask[i]) {
        let label = labels[i];
        if label >= v {
            return Err(invalid!("label {label} at position {i} outside vocabulary {v}"));
        }
        let row = logits.row(i);
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        let lse = log_sum_exp(row);
        total += lse - row[label];
        let mut best = 0;
        for j in 1..v {
            if row[j] > row[best] {
                best = j;
            }
        }
        correct += usize::from(best == label);
        let g = grad.row_mut(i);
        for j in 0..v {
            g[j] = (row[j] - lse).exp() * inv;
        }
        g[label] -= inv;
    }
    Ok(MaskedLoss {
        loss: total * inv,
        accuracy: Some(correct as f64 / count as f64),
        masked_positions: count,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_n() {
        let l = masked_ce_loss(&Tensor::<f64>::zeros(&[4, 7]), &[0, 1, 2, 3], &[true, false, true, true]).unwrap();
        assert!((l.loss - 7f64.ln()).abs() < 1e-12);
        assert_eq!(l.masked_positions, 3);
    }

    #[test]
    fn unmasked_labels_are_ignored() {
        let logits = Tensor::from_vec(&[3, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3, 3.0, 0.0, -2.0]).unwrap();
        let a = masked_ce_loss::<f64>(&logits, &[2, 0, 0], &[true, false, true]).unwrap();
        let b = masked_ce_loss::<f64>(&logits, &[2, 2, 0], &[true, false, true]).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert!(a.grad.row(1).iter().all(|&g| g == 0.0));
        // Out-of-range labels on unmasked rows are never inspected.
        assert!(masked_ce_loss::<f64>(&logits, &[2, 99, 0], &[true, false, true]).is_ok());
    }

    #[test]
    fn hand_computed_two_positions() {
        // Row 0: logits [ln 1, ln 3] -> p = [1/4, 3/4], label 1 -> -ln(3/4).
        // Row 1: logits [0, 0] -> p = [1/2, 1/2], label 0 -> ln 2.
        let logits = Tensor::from_vec(&[2, 2], vec![0.0, 3f64.ln(), 0.0, 0.0]).unwrap();
        let l = masked_ce_loss(&logits, &[1, 0], &[true, true]).unwrap();
        let expected = (-(0.75f64).ln() + 2f64.ln()) / 2.0;
        assert!((l.loss - expected).abs() < 1e-14);
        // Row 1 is a tie; the lowest index wins, which is the label.
        assert_eq!(l.accuracy, Some(1.0));
    }

    #[test]
    fn nothing_masked() {
        let l = masked_ce_loss(&Tensor::<f32>::zeros(&[2, 3]), &[0, 0], &[false, false]).unwrap();
        assert_eq!(l.loss, 0.0);
        assert_eq!(l.accuracy, None);
        assert!(l.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn errors() {
        let z = Tensor::<f64>::zeros(&[2, 3]);
        assert!(masked_ce_loss(&z, &[0, 3], &[true, true]).is_err());
        assert!(masked_ce_loss(&z, &[0], &[true]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let base = vec![0.3, -0.2, 1.1, 0.0, 0.7, -0.5];
        let labels = [2, 1];
        let mask = [true, true];
        let f = |v: &[f64]| {
            masked_ce_loss(&Tensor::from_vec(&[2, 3], v.to_vec()).unwrap(), &labels, &mask)
                .unwrap()
                .loss
        };
        let g = masked_ce_loss(&Tensor::from_vec(&[2, 3], base.clone()).unwrap(), &labels, &mask).unwrap();
        for i in 0..6 {
            let (mut p, mut m) = (base.clone(), base.clone());
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let num = (f(&p) - f(&m)) / 2e-6;
            assert!((num - g.grad.data()[i]).abs() < 1e-8);
        }
    }
}
