use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// How evenly a set of labels covers an `n`-entry codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    pub codes_used_fraction: f64,
    /// Label entropy divided by `ln n`; 0 when `n = 1` or no labels.
    pub normalized_entropy: f64,
    pub histogram: Vec<u64>,
}

impl UtilizationReport {
    pub fn total(&self) -> u64 {
        self.histogram.iter().sum()
    }
}

pub fn utilization(labels: impl IntoIterator<Item = usize>, n: usize) -> Result<UtilizationReport> {
    if n < 1 {
        return Err(invalid!("codebook size must be at least 1"));
    }
    let mut histogram = vec![0u64; n];
    for l in labels {
        if l >= n {
            return Err(invalid!("label {l} outside codebook of size {n}"));
        }
        histogram[l] += 1;
    }
    let total: u64 = histogram.iter().sum();
    let used = histogram.iter().filter(|&&c| c > 0).count();
    let normalized_entropy = if total == 0 || n == 1 {
        0.0
    } else {
        let t = total as f64;
        let h: f64 = histogram
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / t;
                -p * p.ln()
            })
            .sum();
        h / (n as f64).ln()
    };
    Ok(UtilizationReport {
        codes_used_fraction: used as f64 / n as f64,
        normalized_entropy,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_labels() {
        let r = utilization(vec![3; 100], 16).unwrap();
        assert_eq!(r.codes_used_fraction, 1.0 / 16.0);
        assert_eq!(r.normalized_entropy, 0.0);
        assert_eq!(r.total(), 100);
    }

    #[test]
    fn uniform_cover() {
        let r = utilization((0..64).chain(0..64), 64).unwrap();
        assert_eq!(r.codes_used_fraction, 1.0);
        assert!((r.normalized_entropy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label() {
        assert!(utilization(vec![0, 4], 4).is_err());
    }

    #[test]
    fn iid_uniform_occupancy() {
        // Expected occupied fraction for n draws over n bins: 1 - (1 - 1/n)^n ~ 1 - 1/e.
        let n = 8192;
        let expected = 1.0 - (1.0 - 1.0 / n as f64).powi(n as i32);
        let mut r = crate::rng::rng(8, "occupancy");
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        let rep = utilization(labels, n).unwrap();
        assert!((rep.codes_used_fraction - expected).abs() < 0.02);
        assert!((expected - (1.0 - (-1.0f64).exp())).abs() < 1e-4);
    }
}
