use serde::{Deserialize, Serialize};

use super::SequenceLabeler;
use crate::data::FeatureSequence;
use crate::error::{config_err, shape_err, Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// Projections with `|Ax|` below this are refused.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpqSpec {
    pub input_dim: usize,
    pub code_dim: usize,
    pub codebook_size: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub l2_normalize: bool,
}

fn yes() -> bool {
    true
}

/// Frozen random-projection quantizer: label = index of the codebook row
/// whose direction is closest to the direction of `A x`.
///
/// `A` is `h x d` Xavier-uniform, the codebook `C` is `n x h` standard
/// normal. Both are fixed at construction and exposed read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjectionQuantizer {
    spec: RpqSpec,
    projection: Tensor<f32>,
    codebook: Tensor<f32>,
    // Codebook rows in f64, unit-normalized when `l2_normalize` is set.
    codes: Vec<f64>,
}

pub fn init_rpq(d: usize, h: usize, n: usize, seed: u64) -> Result<RandomProjectionQuantizer> {
    RandomProjectionQuantizer::new(RpqSpec {
        input_dim: d,
        code_dim: h,
        codebook_size: n,
        seed,
        l2_normalize: true,
    })
}

impl RandomProjectionQuantizer {
    pub fn new(spec: RpqSpec) -> Result<Self> {
        let RpqSpec {
            input_dim: d,
            code_dim: h,
            codebook_size: n,
            seed,
            ..
        } = spec;
        if d < 1 || h < 1 || n < 1 {
            return Err(config_err!("quantizer dims must be >= 1, got d={d} h={h} n={n}"));
        }
        let projection = rng::xavier_uniform(&mut rng::rng(seed, "rpq-projection"), &[h, d], d, h);
        let codebook = rng::standard_normal(&mut rng::rng(seed, "rpq-codebook"), &[n, h]);
        Self::from_matrices(spec, projection, codebook)
    }

    pub(crate) fn from_matrices(spec: RpqSpec, projection: Tensor<f32>, codebook: Tensor<f32>) -> Result<Self> {
        let (d, h, n) = (spec.input_dim, spec.code_dim, spec.codebook_size);
        if projection.shape() != [h, d] || codebook.shape() != [n, h] {
            return Err(shape_err!(
                "quantizer matrices {:?}/{:?} do not match d={d} h={h} n={n}",
                projection.shape(),
                codebook.shape()
            ));
        }
        let mut codes: Vec<f64> = codebook.data().iter().map(|&v| v as f64).collect();
        if spec.l2_normalize {
            for row in codes.chunks_mut(h) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < DEGENERATE_NORM {
                    return Err(Error::DegenerateProjection { norm });
                }
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(Self {
            spec,
            projection,
            codebook,
            codes,
        })
    }

    pub fn spec(&self) -> &RpqSpec {
        &self.spec
    }

    pub fn projection(&self) -> &Tensor<f32> {
        &self.projection
    }

    pub fn codebook(&self) -> &Tensor<f32> {
        &self.codebook
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn codebook_size(&self) -> usize {
        self.spec.codebook_size
    }

    /// `A x` in f64.
    pub fn project(&self, x: &[f32]) -> Result<Vec<f64>> {
        let d = self.spec.input_dim;
        if x.len() != d {
            return Err(shape_err!("quantizer expects d={d}, got {}", x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quantizer input".into()));
        }
        Ok(self
            .projection
            .data()
            .chunks(d)
            .map(|row| row.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum())
            .collect())
    }

    /// Label of one input vector. Ties resolve to the lowest index.
    pub fn quantize(&self, x: &[f32]) -> Result<usize> {
        let mut y = self.project(x)?;
        let h = self.spec.code_dim;
        if self.spec.l2_normalize {
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < DEGENERATE_NORM {
                return Err(Error::DegenerateProjection { norm });
            }
            y.iter_mut().for_each(|v| *v /= norm);
            // On the unit sphere the nearest code is the one with the
            // largest inner product.
            let mut best = (0, f64::NEG_INFINITY);
            for (i, c) in self.codes.chunks(h).enumerate() {
                let dot: f64 = c.iter().zip(&y).map(|(a, b)| a * b).sum();
                if dot > best.1 {
                    best = (i, dot);
                }
            }
            Ok(best.0)
        } else {
            let mut best = (0, f64::INFINITY);
            for (i, c) in self.codes.chunks(h).enumerate() {
                let dist: f64 = c.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.1 {
                    best = (i, dist);
                }
            }
            Ok(best.0)
        }
    }

    /// One label per frame of an already stacked sequence; any degenerate
    /// frame is an error.
    pub fn quantize_sequence(&self, seq: &FeatureSequence) -> Result<Vec<usize>> {
        self.check_dim(seq)?;
        (0..seq.len()).map(|t| self.quantize(seq.frame(t))).collect()
    }

    fn check_dim(&self, seq: &FeatureSequence) -> Result<()> {
        if seq.dim() != self.spec.input_dim {
            return Err(shape_err!(
                "quantizer expects frames of dim {}, got {}",
                self.spec.input_dim,
                seq.dim()
            ));
        }
        Ok(())
    }
}

impl SequenceLabeler for RandomProjectionQuantizer {
    fn vocab_size(&self) -> usize {
        self.spec.codebook_size
    }

    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn label_sequence(&self, stacked: &FeatureSequence) -> Result<Vec<Option<usize>>> {
        self.check_dim(stacked)?;
        (0..stacked.len())
            .map(|t| match self.quantize(stacked.frame(t)) {
                Ok(l) => Ok(Some(l)),
                Err(Error::DegenerateProjection { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect()
    }
}
