//! Central finite-difference checks of analytic gradients.
//!
//! The numeric side only ever evaluates the forward function, so it stays
//! independent of the backward rules it is used to verify.

use super::{no_grad, Tensor};
use crate::error::{usage_err, Result};

/// Denominator floor for the relative error, so parameters whose true
/// gradient is zero are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Central differences `(f(θ+h) − f(θ−h)) / 2h` of every `stride`-th
/// element of every tensor in `params`; skipped elements are `None`.
/// Parameters are restored afterwards.
pub fn numeric_gradient<L>(params: &mut [Tensor<f64>], loss: L, h: f64, stride: usize) -> Result<Vec<Vec<Option<f64>>>>
where
    L: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    if h <= 0.0 || stride == 0 {
        return usage_err("gradcheck needs h > 0 and stride ≥ 1");
    }
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let original = params[pi].to_vec();
        let mut g = vec![None; original.len()];
        for i in (0..original.len()).step_by(stride) {
            let mut probe = |delta: f64| -> Result<f64> {
                let mut v = original.clone();
                v[i] += delta;
                params[pi].set_data(v)?;
                no_grad(|| loss(params))?.item()
            };
            g[i] = Some((probe(h)? - probe(-h)?) / (2.0 * h));
        }
        params[pi].set_data(original)?;
        out.push(g);
    }
    Ok(out)
}

/// Compares `loss.backward()` with central differences for every element
/// of every tensor in `params` (or every `stride`-th element when
/// `stride > 1`).
pub fn check<L>(params: &mut [Tensor<f64>], loss: L, h: f64, stride: usize) -> Result<GradCheckReport>
where
    L: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let grads = loss(params)?.backward()?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| grads.get_or_zeros(p)).collect();
    let numeric = numeric_gradient(params, &loss, h, stride)?;

    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    for (pi, (a_row, n_row)) in analytic.iter().zip(&numeric).enumerate() {
        for (i, (&a, n)) in a_row.iter().zip(n_row).enumerate() {
            let Some(numeric) = *n else { continue };
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = Some(Mismatch { param: pi, index: i, analytic: a, numeric });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        // detach hides x from the tape, so the analytic gradient of x·x is x
        // instead of 2x and the check must flag it.
        let mut ps = vec![Tensor::param(&[3], vec![0.5, -0.7, 0.9]).unwrap()];
        let r = check(&mut ps, |p| p[0].mul(&p[0].detach()).map(|t| t.sum()), 1e-4, 1).unwrap();
        assert!(r.max_rel_err > 0.4, "{r:?}");
    }

    #[test]
    fn restores_parameters() {
        let mut ps = vec![Tensor::param(&[2], vec![0.25, 0.5]).unwrap()];
        let id = ps[0].id();
        check(&mut ps, |p| Ok(p[0].mul(&p[0])?.sum()), 1e-4, 1).unwrap();
        assert_eq!(ps[0].data(), &[0.25, 0.5]);
        assert_eq!(ps[0].id(), id);
    }
}
