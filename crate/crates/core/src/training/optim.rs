//! AdamW with decoupled weight decay, and the warmup + cosine schedule.

use std::f64::consts::PI;

use crate::error::{dim_err, Error, Result};
use crate::numerics::Scalar;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.05 }
    }
}

/// First and second moments per parameter, plus which parameters decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub decay: Vec<bool>,
}

impl<F: Scalar> AdamState<F> {
    /// Zero moments; weight decay applies to matrices only, not to
    /// vectors (biases, norm gains, the mask query, the class token).
    pub fn new(params: &ParamStore<F>) -> Self {
        let decay = params.tensors().iter().map(|t| t.rank() >= 2).collect();
        Self::with_decay(params, decay)
    }

    pub fn with_decay(params: &ParamStore<F>, decay: Vec<bool>) -> Self {
        let zeros: Vec<Vec<F>> = params.tensors().iter().map(|t| vec![F::zero(); t.numel()]).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros, decay }
    }
}

/// One AdamW update of every parameter with its gradient.
pub fn adamw_step<F: Scalar>(
    params: &mut ParamStore<F>,
    grads: &[Vec<F>],
    state: &mut AdamState<F>,
    lr: f64,
    hp: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.decay.len() != params.len() {
        return dim_err(format!("{} gradients / {} moments for {} parameters", grads.len(), state.m.len(), params.len()));
    }
    for (i, (g, t)) in grads.iter().zip(params.tensors()).enumerate() {
        if g.len() != t.numel() {
            return dim_err(format!("gradient of {} has {} values, expected {}", params.names()[i], g.len(), t.numel()));
        }
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient {} for {}", bad.as_f64(), params.names()[i])));
        }
    }
    state.step += 1;
    let k = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(k);
    let c2 = 1.0 - hp.beta2.powi(k);
    for (i, g) in grads.iter().enumerate() {
        let wd = if state.decay[i] { hp.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let mut p: Vec<F> = params.tensors()[i].to_vec();
        for j in 0..p.len() {
            let gj = g[j].as_f64();
            let mj = hp.beta1 * m[j].as_f64() + (1.0 - hp.beta1) * gj;
            let vj = hp.beta2 * v[j].as_f64() + (1.0 - hp.beta2) * gj * gj;
            m[j] = F::of(mj);
            v[j] = F::of(vj);
            let pj = p[j].as_f64();
            let update = (mj / c1) / ((vj / c2).sqrt() + hp.eps);
            p[j] = F::of(pj - lr * wd * pj - lr * update);
        }
        params.set(crate::params::ParamId(i), p)?;
    }
    Ok(())
}

/// Linear warmup to `peak` then half-cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

pub fn lr_at(step: usize, s: &Schedule) -> f64 {
    if step < s.warmup_steps {
        return s.peak * step as f64 / s.warmup_steps as f64;
    }
    let span = s.total_steps.saturating_sub(s.warmup_steps).max(1);
    let progress = ((step - s.warmup_steps) as f64 / span as f64).min(1.0);
    s.peak * 0.5 * (1.0 + (PI * progress).cos())
}

/// Peak learning rate under the linear scaling rule
/// `base_lr × batch_size / 256`.
pub fn scaled_lr(base_lr: f64, batch_size: usize) -> f64 {
    base_lr * batch_size as f64 / 256.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store(values: &[f64], shape: &[usize]) -> ParamStore<f64> {
        let mut s = ParamStore::default();
        s.add("w", Tensor::new(shape, values.to_vec()).unwrap());
        s
    }

    #[test]
    fn zero_grads_without_decay_leave_params() {
        let mut s = store(&[1.0, -2.0, 3.0, 0.5], &[2, 2]);
        let mut st = AdamState::new(&s);
        let hp = AdamHyper { weight_decay: 0.0, ..Default::default() };
        for _ in 0..3 {
            adamw_step(&mut s, &[vec![0.0; 4]], &mut st, 0.1, &hp).unwrap();
        }
        assert_eq!(s.tensors()[0].data(), &[1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(&[0.0], &[1, 1]);
        let mut st = AdamState::new(&s);
        let hp = AdamHyper { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut s, &[vec![1.0]], &mut st, 0.1, &hp).unwrap();
        assert!((s.tensors()[0].data()[0] + 0.1).abs() < 1e-7);
    }

    #[test]
    fn decay_only_shrinks_matrices() {
        let mut s = store(&[2.0, 4.0], &[1, 2]);
        s.add("b", Tensor::new(&[2], vec![2.0, 4.0]).unwrap());
        let mut st = AdamState::new(&s);
        let hp = AdamHyper { weight_decay: 0.05, ..Default::default() };
        adamw_step(&mut s, &[vec![0.0; 2], vec![0.0; 2]], &mut st, 0.1, &hp).unwrap();
        let w = s.tensors()[0].data();
        assert!((w[0] - 2.0 * (1.0 - 0.005)).abs() < 1e-12 && (w[1] - 4.0 * (1.0 - 0.005)).abs() < 1e-12);
        assert_eq!(s.tensors()[1].data(), &[2.0, 4.0]);
    }

    #[test]
    fn nan_gradient_is_rejected_before_any_update() {
        let mut s = store(&[1.0, 1.0], &[1, 2]);
        let mut st = AdamState::new(&s);
        let r = adamw_step(&mut s, &[vec![0.5, f64::NAN]], &mut st, 0.1, &AdamHyper::default());
        assert!(matches!(r, Err(Error::Numeric(_))));
        assert_eq!((s.tensors()[0].data(), st.step), (&[1.0, 1.0][..], 0));
    }

    #[test]
    fn schedule_knots() {
        let s = Schedule { peak: 1e-3, warmup_steps: 10, total_steps: 110 };
        assert_eq!(lr_at(0, &s), 0.0);
        assert_eq!(lr_at(10, &s), 1e-3);
        assert!((lr_at(60, &s) - 5e-4).abs() < 1e-15);
        assert!(lr_at(110, &s).abs() < 1e-18);
        assert_eq!(scaled_lr(1.5e-4, 256), 1.5e-4);
    }

    #[test]
    fn schedule_is_continuous_and_nonincreasing_after_warmup() {
        let s = Schedule { peak: 2.0, warmup_steps: 7, total_steps: 50 };
        assert!((lr_at(6, &s) - lr_at(7, &s)).abs() <= 2.0 / 7.0 + 1e-12);
        for k in 7..60 {
            assert!(lr_at(k + 1, &s) <= lr_at(k, &s));
        }
    }
}
