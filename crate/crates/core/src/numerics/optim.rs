use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{config_err, shape_err, Error, Result};

/// Warmup-then-inverse-sqrt learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(config_err!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if self.warmup_steps < 1 {
            return Err(config_err!("warmup_steps must be at least 1"));
        }
        Ok(())
    }
}

/// `peak · min(step / warmup, sqrt(warmup / step))`, for `step >= 1`.
pub fn transformer_lr(step: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if step == 0 {
        return Err(Error::Precondition("learning-rate step counts from 1".into()));
    }
    cfg.validate()?;
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    Ok(cfg.peak_lr * (s / w).min((w / s).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
        }
    }
}

/// Moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub hyper: AdamHyper,
}

impl<F: Real> AdamState<F> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>, hyper: AdamHyper) -> Self {
        let m: Vec<_> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = m.clone();
        Self { step: 0, m, v, hyper }
    }
}

/// One bias-corrected Adam update. Validates everything before touching any
/// parameter, so a failed call leaves params and state unchanged.
pub fn adam_step<F: Real>(
    params: &mut [&mut Tensor<F>],
    grads: &[&Tensor<F>],
    state: &mut AdamState<F>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(shape_err!(
                "adam slot {i}: param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            ));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient slot {i}")));
        }
    }
    state.step += 1;
    let AdamHyper { beta1, beta2, epsilon } = state.hyper;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (F::from_f64(beta1), F::from_f64(beta2));
    let (one_b1, one_b2) = (F::from_f64(1.0 - beta1), F::from_f64(1.0 - beta2));
    let inv_bc1 = F::from_f64(1.0 / bc1);
    let inv_bc2 = F::from_f64(1.0 / bc2);
    let lr = F::from_f64(lr);
    let eps = F::from_f64(epsilon);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + one_b1 * gv;
            v[j] = b2 * v[j] + one_b2 * gv * gv;
            let mhat = m[j] * inv_bc1;
            let vhat = v[j] * inv_bc2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScheduleConfig {
        ScheduleConfig {
            peak_lr: 0.004,
            warmup_steps: 1000,
        }
    }

    #[test]
    fn schedule_reference_points() {
        let c = cfg();
        assert_eq!(transformer_lr(1000, &c).unwrap(), 0.004);
        assert!((transformer_lr(500, &c).unwrap() - 0.002).abs() < 1e-15);
        assert!((transformer_lr(4000, &c).unwrap() - 0.002).abs() < 1e-15);
        assert!(matches!(transformer_lr(0, &c), Err(Error::Precondition(_))));
    }

    #[test]
    fn schedule_peaks_at_warmup() {
        let c = ScheduleConfig {
            peak_lr: 1.0,
            warmup_steps: 50,
        };
        let lrs: Vec<f64> = (1..=200).map(|s| transformer_lr(s, &c).unwrap()).collect();
        for s in 1..50 {
            assert!(lrs[s] > lrs[s - 1]);
        }
        for s in 50..199 {
            assert!(lrs[s + 1] < lrs[s]);
        }
        assert_eq!(lrs[49], 1.0);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new([&p], AdamHyper::default());
        adam_step(&mut [&mut p], &[&g], &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn single_step_hand_oracle() {
        // m = 0.1, v = 0.02, m_hat = 1, v_hat = 1 -> p = 1 - 0.1 / (1 + 1e-9)
        let mut p = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        let mut st = AdamState::new([&p], AdamHyper::default());
        adam_step(&mut [&mut p], &[&g], &mut st, 0.1).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-9);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((st.m[0].data()[0] - 0.1).abs() < 1e-15);
        assert!((st.v[0].data()[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let run = || {
            let mut p = Tensor::from_vec(&[2], vec![0.3f32, -0.7]).unwrap();
            let g = Tensor::from_vec(&[2], vec![0.01f32, 2.0]).unwrap();
            let mut st = AdamState::new([&p], AdamHyper::default());
            for _ in 0..5 {
                adam_step(&mut [&mut p], &[&g], &mut st, 0.01).unwrap();
            }
            p
        };
        assert_eq!(run().to_le_bytes(), run().to_le_bytes());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = Tensor::from_vec(&[2], vec![0.0f64, 0.0]).unwrap();
        let mut st = AdamState::new([&p], AdamHyper::default());
        let bad_shape = Tensor::zeros(&[3]);
        assert!(adam_step(&mut [&mut p], &[&bad_shape], &mut st, 0.1).is_err());
        let nan = Tensor::from_parts(vec![2], vec![f64::NAN, 0.0]);
        assert!(matches!(
            adam_step(&mut [&mut p], &[&nan], &mut st, 0.1),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(st.step, 0);
    }
}
