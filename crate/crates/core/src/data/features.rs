use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_STRIDE_MS: f32 = 10.0;

/// `T x d` feature frames with their frame stride.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Tensor<f32>,
    frame_stride_ms: f32,
}

impl FeatureSequence {
    pub fn new(frames: Tensor<f32>, frame_stride_ms: f32) -> Result<Self> {
        if frames.shape().len() != 2 {
            return Err(shape_err!("features must be 2-D, got {:?}", frames.shape()));
        }
        if frames.shape()[0] < 1 || frames.shape()[1] < 1 {
            return Err(invalid!("feature sequence needs T >= 1 and d >= 1, got {:?}", frames.shape()));
        }
        if !(frame_stride_ms > 0.0 && frame_stride_ms.is_finite()) {
            return Err(invalid!("frame stride must be positive, got {frame_stride_ms}"));
        }
        if !frames.all_finite() {
            return Err(Error::NonFinite("feature frames".into()));
        }
        Ok(Self {
            frames,
            frame_stride_ms,
        })
    }

    pub fn from_rows(rows: usize, dim: usize, data: Vec<f32>, frame_stride_ms: f32) -> Result<Self> {
        Self::new(Tensor::from_vec(&[rows, dim], data)?, frame_stride_ms)
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        self.frames.row(t)
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn frame_stride_ms(&self) -> f32 {
        self.frame_stride_ms
    }

    pub(crate) fn from_parts_unchecked(frames: Tensor<f32>, frame_stride_ms: f32) -> Self {
        Self {
            frames,
            frame_stride_ms,
        }
    }
}

/// Per-dimension corpus mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

pub fn compute_stats<'a>(corpus: impl IntoIterator<Item = &'a FeatureSequence>) -> Result<CorpusStats> {
    let seqs: Vec<&FeatureSequence> = corpus.into_iter().collect();
    let first = seqs.first().ok_or_else(|| invalid!("cannot compute stats of an empty corpus"))?;
    let d = first.dim();
    let mut count = 0usize;
    let mut sum = vec![0.0f64; d];
    for s in &seqs {
        if s.dim() != d {
            return Err(shape_err!("corpus mixes feature dims {} and {}", d, s.dim()));
        }
        for row in s.frames().data().chunks(d) {
            for (a, &v) in sum.iter_mut().zip(row) {
                *a += v as f64;
            }
        }
        count += s.len();
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0f64; d];
    for s in &seqs {
        for row in s.frames().data().chunks(d) {
            for ((a, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                let c = v as f64 - m;
                *a += c * c;
            }
        }
    }
    let std = sq.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    Ok(CorpusStats { mean, std })
}

pub fn normalize(seq: &FeatureSequence, stats: &CorpusStats) -> Result<FeatureSequence> {
    let d = seq.dim();
    if stats.mean.len() != d || stats.std.len() != d {
        return Err(shape_err!(
            "stats have dim {} but features have dim {}",
            stats.mean.len(),
            d
        ));
    }
    let mut data = seq.frames().data().to_vec();
    for row in data.chunks_mut(d) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = ((*v as f64 - m) / s) as f32;
        }
    }
    FeatureSequence::from_rows(seq.len(), d, data, seq.frame_stride_ms())
}

/// Concatenates every `k` consecutive frames; the trailing `T mod k` frames
/// are dropped.
pub fn stack_frames(seq: &FeatureSequence, k: usize) -> Result<FeatureSequence> {
    if k < 1 {
        return Err(invalid!("stack factor must be at least 1"));
    }
    let t = seq.len();
    if t < k {
        return Err(invalid!("cannot stack {t} frames by {k}"));
    }
    let out_t = t / k;
    let d = seq.dim();
    // Row-major storage makes k consecutive rows exactly one stacked row.
    let data = seq.frames().data()[..out_t * k * d].to_vec();
    Ok(FeatureSequence::from_parts_unchecked(
        Tensor::from_parts(vec![out_t, k * d], data),
        seq.frame_stride_ms() * k as f32,
    ))
}
