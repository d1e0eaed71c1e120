//! Span masking: Bernoulli span starts per frame, fixed span length, masked
//! frames replaced by Gaussian noise.

use rand::Rng;

use crate::data::FeatureSequence;
use crate::error::{invalid, Result};
use crate::numerics::Tensor;
use crate::rng;

pub const DEFAULT_NOISE_STD: f64 = 0.1;
/// 400 ms at a 10 ms stride.
pub const DEFAULT_SPAN_FRAMES: usize = 40;
pub const DEFAULT_START_PROB: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub len: usize,
    pub span_frames: usize,
    pub start_prob: f64,
    pub starts: Vec<usize>,
    pub mask: Vec<bool>,
}

impl MaskPlan {
    /// Rebuilds the mask as the union of `[s, min(s + span, len))`.
    pub fn from_starts(len: usize, span_frames: usize, start_prob: f64, starts: Vec<usize>) -> Result<Self> {
        if span_frames < 1 {
            return Err(invalid!("span_frames must be at least 1"));
        }
        let mut mask = vec![false; len];
        for &s in &starts {
            if s >= len {
                return Err(invalid!("span start {s} outside sequence of length {len}"));
            }
            let end = (s + span_frames).min(len);
            mask[s..end].iter_mut().for_each(|m| *m = true);
        }
        Ok(Self {
            len,
            span_frames,
            start_prob,
            starts,
            mask,
        })
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn sample_mask(len: usize, start_prob: f64, span_frames: usize, seed: u64) -> Result<MaskPlan> {
    if len < 1 {
        return Err(invalid!("cannot mask an empty sequence"));
    }
    if !(0.0..=1.0).contains(&start_prob) {
        return Err(invalid!("start_prob must lie in [0, 1], got {start_prob}"));
    }
    if span_frames < 1 {
        return Err(invalid!("span_frames must be at least 1"));
    }
    let mut r = rng::rng(seed, "mask-starts");
    let starts = (0..len).filter(|_| r.random::<f64>() < start_prob).collect();
    MaskPlan::from_starts(len, span_frames, start_prob, starts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    pub original: FeatureSequence,
    pub masked: FeatureSequence,
    pub plan: MaskPlan,
    pub noise_seed: u64,
}

pub fn apply_mask(seq: &FeatureSequence, plan: &MaskPlan, noise_std: f64, seed: u64) -> Result<MaskedSequence> {
    if plan.len != seq.len() || plan.mask.len() != seq.len() {
        return Err(invalid!(
            "mask covers {} frames but sequence has {}",
            plan.len,
            seq.len()
        ));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(invalid!("noise_std must be >= 0"));
    }
    let d = seq.dim();
    let mut data = seq.frames().data().to_vec();
    let mut r = rng::rng(seed, "mask-noise");
    for (t, &m) in plan.mask.iter().enumerate() {
        if m {
            for v in &mut data[t * d..(t + 1) * d] {
                *v = rng::normal(&mut r, noise_std);
            }
        }
    }
    let masked = FeatureSequence::new(Tensor::from_vec(&[seq.len(), d], data)?, seq.frame_stride_ms())?;
    Ok(MaskedSequence {
        original: seq.clone(),
        masked,
        plan: plan.clone(),
        noise_seed: seed,
    })
}

/// Position `i` of the result is masked iff any of frames `ik..ik+k-1` is.
pub fn reduce_mask(mask: &[bool], k: usize) -> Result<Vec<bool>> {
    if k < 1 {
        return Err(invalid!("reduction factor must be at least 1"));
    }
    Ok(mask.chunks_exact(k).map(|c| c.iter().any(|&m| m)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, d: usize) -> FeatureSequence {
        FeatureSequence::from_rows(t, d, (0..t * d).map(|i| i as f32).collect(), 10.0).unwrap()
    }

    #[test]
    fn zero_and_one_probabilities() {
        let empty = sample_mask(50, 0.0, 5, 1).unwrap();
        assert!(empty.starts.is_empty() && empty.mask.iter().all(|&m| !m));
        let full = sample_mask(50, 1.0, 1, 1).unwrap();
        assert!(full.mask.iter().all(|&m| m));
        assert!(sample_mask(10, 0.5, 0, 1).is_err());
        assert!(sample_mask(10, 1.5, 2, 1).is_err());
    }

    #[test]
    fn spans_are_clipped_at_end() {
        let plan = MaskPlan::from_starts(10, 4, 0.0, vec![8]).unwrap();
        assert_eq!(plan.mask, [vec![false; 8], vec![true; 2]].concat());
        let masked = apply_mask(&ramp(10, 2), &plan, 0.1, 3).unwrap();
        assert_eq!(masked.masked.len(), 10);
    }

    #[test]
    fn empty_mask_copies_bit_exactly() {
        let s = ramp(20, 3);
        let plan = MaskPlan::from_starts(20, 5, 0.0, vec![]).unwrap();
        let m = apply_mask(&s, &plan, 0.1, 9).unwrap();
        assert_eq!(m.masked.frames().to_le_bytes(), s.frames().to_le_bytes());
    }

    #[test]
    fn length_mismatch_errors() {
        let plan = MaskPlan::from_starts(5, 2, 0.0, vec![0]).unwrap();
        assert!(apply_mask(&ramp(6, 1), &plan, 0.1, 0).is_err());
    }

    #[test]
    fn reduce_mask_examples() {
        let m = [false, true, false, false];
        assert_eq!(reduce_mask(&m, 1).unwrap(), m.to_vec());
        assert_eq!(reduce_mask(&m, 2).unwrap(), vec![true, false]);
        assert_eq!(reduce_mask(&[false; 9], 4).unwrap(), vec![false, false]);
    }

    #[test]
    fn seeds_determine_everything() {
        let a = sample_mask(300, 0.05, 7, 11).unwrap();
        let b = sample_mask(300, 0.05, 7, 11).unwrap();
        assert_eq!(a, b);
        let s = ramp(300, 2);
        assert_eq!(apply_mask(&s, &a, 0.1, 4).unwrap(), apply_mask(&s, &b, 0.1, 4).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn mask_is_union_of_spans_and_unmasked_frames_untouched(
            t in 1usize..120, span in 1usize..15, p in 0.0f64..0.3, seed in 0u64..1000,
        ) {
            let plan = sample_mask(t, p, span, seed).unwrap();
            for (i, &m) in plan.mask.iter().enumerate() {
                let covered = plan.starts.iter().any(|&s| s <= i && i < s + span);
                proptest::prop_assert_eq!(m, covered);
            }
            let rebuilt = MaskPlan::from_starts(t, span, p, plan.starts.clone()).unwrap();
            proptest::prop_assert_eq!(&rebuilt.mask, &plan.mask);
            let s = ramp(t, 2);
            let m = apply_mask(&s, &plan, 0.1, seed).unwrap();
            for i in 0..t {
                if !plan.mask[i] {
                    proptest::prop_assert_eq!(m.masked.frame(i), s.frame(i));
                }
            }
        }
    }
}
