//! Pre-training objectives: latent alignment, appearance token
//! classification, motion regression and their weighted sum.

use crate::error::{dim_err, usage_err, Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const DEFAULT_ALPHA: f64 = 2.0;

/// How the motion MSE is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MseReduction {
    /// Squared L2 per patch, averaged over patches.
    #[default]
    PatchMean,
    /// Averaged over every scalar element.
    ElementMean,
}

impl MseReduction {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "patch-mean" => Ok(MseReduction::PatchMean),
            "element-mean" => Ok(MseReduction::ElementMean),
            other => Err(Error::Config(format!("unknown mse_reduction {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MseReduction::PatchMean => "patch-mean",
            MseReduction::ElementMean => "element-mean",
        }
    }
}

/// Per-clip loss values with the weight used to combine them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle<F> {
    pub appearance: F,
    pub motion: F,
    pub alignment: F,
    pub total: F,
    pub alpha: F,
}

fn squared_error_sum<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.shape() != b.shape() {
        return dim_err(format!("loss operands {:?} vs {:?}", a.shape(), b.shape()));
    }
    let d = a.sub(b)?;
    Ok(d.mul(&d)?.sum())
}

/// Mean over tokens of `‖r − r̂‖²`; both `|M|×D`.
pub fn alignment_loss<F: Scalar>(r: &Tensor<F>, r_hat: &Tensor<F>) -> Result<Tensor<F>> {
    if r.rank() != 2 {
        return dim_err(format!("alignment loss expects |M|×D, got {:?}", r.shape()));
    }
    let m = r.shape()[0];
    if m == 0 {
        return usage_err("alignment loss over an empty masked set");
    }
    Ok(squared_error_sum(r, r_hat)?.scale(F::of(1.0 / m as f64)))
}

/// Mean softmax cross-entropy of `|M|×K` logits against token ids.
pub fn appearance_loss<F: Scalar>(logits: &Tensor<F>, targets: &[usize]) -> Result<Tensor<F>> {
    if logits.rank() != 2 || logits.shape()[0] != targets.len() {
        return dim_err(format!("appearance loss: logits {:?} vs {} targets", logits.shape(), targets.len()));
    }
    if targets.is_empty() {
        return usage_err("appearance loss over an empty masked set");
    }
    logits.cross_entropy(targets)
}

/// Motion MSE over the patches of `M′`; `pred` and `target` are
/// `(T−1)×N_m×d` (or any congruent shape whose last axis is the patch).
pub fn motion_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>, reduction: MseReduction) -> Result<Tensor<F>> {
    let Some((&d, lead)) = pred.shape().split_last() else {
        return dim_err("motion loss expects at least one axis");
    };
    let patches: usize = lead.iter().product();
    if patches == 0 || d == 0 {
        return usage_err("motion loss over an empty patch set");
    }
    let count = match reduction {
        MseReduction::PatchMean => patches,
        MseReduction::ElementMean => patches * d,
    };
    Ok(squared_error_sum(pred, target)?.scale(F::of(1.0 / count as f64)))
}

fn check_finite<F: Scalar>(name: &str, v: F) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} loss is {}", v.as_f64())))
    }
}

/// `(appearance + motion) + alpha·alignment` on plain values.
pub fn hybrid_loss<F: Scalar>(appearance: F, motion: F, alignment: F, alpha: F) -> Result<LossBundle<F>> {
    check_finite("appearance", appearance)?;
    check_finite("motion", motion)?;
    check_finite("alignment", alignment)?;
    let total = (appearance + motion) + alignment * alpha;
    Ok(LossBundle { appearance, motion, alignment, total, alpha })
}

/// Differentiable counterpart of [`hybrid_loss`]; the returned total tensor
/// and bundle agree bit-for-bit.
pub fn hybrid_loss_tensor<F: Scalar>(
    appearance: &Tensor<F>,
    motion: &Tensor<F>,
    alignment: &Tensor<F>,
    alpha: F,
) -> Result<(Tensor<F>, LossBundle<F>)> {
    let bundle = hybrid_loss(appearance.item()?, motion.item()?, alignment.item()?, alpha)?;
    let total = appearance.add(motion)?.add(&alignment.scale(alpha))?;
    debug_assert_eq!(total.item()?, bundle.total);
    Ok((total, bundle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn alignment_examples() {
        let a = t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(alignment_loss(&a, &a).unwrap().item().unwrap(), 0.0);
        let one = alignment_loss(&t(&[1, 2], vec![1.0, 0.0]), &t(&[1, 2], vec![0.0, 0.0])).unwrap();
        assert_eq!(one.item().unwrap(), 1.0);
        let r = t(&[2, 2], vec![1.0, 0.0, 1.0, 1.0]);
        let z = t(&[2, 2], vec![0.0, 0.0, 0.0, -0.0]);
        let r2 = t(&[2, 2], vec![1.0, 0.0, 1.0, 2.0_f64.sqrt()]);
        assert_eq!(alignment_loss(&r, &z).unwrap().item().unwrap(), 1.5);
        assert!((alignment_loss(&r2, &z).unwrap().item().unwrap() - 2.0).abs() < 1e-15);
        // an empty masked set cannot even be formed as a tensor
        assert!(Tensor::<f64>::new(&[0, 2], vec![]).is_err());
    }

    #[test]
    fn appearance_examples() {
        let k = 16384;
        let uniform = appearance_loss(&Tensor::<f64>::zeros(&[3, k]).unwrap(), &[0, 5, k - 1]).unwrap();
        assert!((uniform.item().unwrap() - (k as f64).ln()).abs() < 1e-9);
        let mut hot = vec![0.0; 8];
        hot[3] = 30.0;
        assert!(appearance_loss(&t(&[1, 8], hot), &[3]).unwrap().item().unwrap() < 1e-6);
        let two = appearance_loss(&t(&[1, 2], vec![0.0, 0.0]), &[1]).unwrap().item().unwrap();
        assert!((two - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(appearance_loss(&t(&[1, 2], vec![0.0, 0.0]), &[2]), Err(Error::Usage(_))));
    }

    #[test]
    fn motion_examples() {
        let p = t(&[2, 3, 4], (0..24).map(f64::from).collect());
        assert_eq!(motion_loss(&p, &p, MseReduction::PatchMean).unwrap().item().unwrap(), 0.0);
        let zero = Tensor::zeros(&[2, 3, 4]).unwrap();
        let c = Tensor::full(&[2, 3, 4], 0.5).unwrap();
        assert_eq!(motion_loss(&zero, &c, MseReduction::PatchMean).unwrap().item().unwrap(), 0.25 * 4.0);
        assert_eq!(motion_loss(&zero, &c, MseReduction::ElementMean).unwrap().item().unwrap(), 0.25);
        let mut off = vec![0.0; 24];
        off[5] = 1.0;
        let l = motion_loss(&t(&[2, 3, 4], off), &zero, MseReduction::PatchMean).unwrap().item().unwrap();
        assert_eq!(l, 1.0 / 6.0);
    }

    #[test]
    fn duplicating_tokens_keeps_means() {
        let r = t(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]);
        let h = t(&[2, 2], vec![0.0, 1.0, 2.0, -1.0]);
        let rr = t(&[4, 2], [r.to_vec(), r.to_vec()].concat());
        let hh = t(&[4, 2], [h.to_vec(), h.to_vec()].concat());
        assert_eq!(alignment_loss(&r, &h).unwrap().item().unwrap(), alignment_loss(&rr, &hh).unwrap().item().unwrap());
    }

    #[test]
    fn hybrid_examples() {
        assert_eq!(hybrid_loss(1.0, 2.0, 3.0, 2.0).unwrap().total, 9.0);
        assert_eq!(hybrid_loss(1.0, 2.0, 3.0, 0.0).unwrap().total, 3.0);
        assert_eq!(DEFAULT_ALPHA, 2.0);
        assert!(matches!(hybrid_loss(f64::NAN, 0.0, 0.0, 2.0), Err(Error::Numeric(_))));
        let (a, m, g) = (Tensor::scalar(0.1f32), Tensor::scalar(0.7f32), Tensor::scalar(1.3f32));
        let (total, b) = hybrid_loss_tensor(&a, &m, &g, 2.0).unwrap();
        assert_eq!(total.item().unwrap().to_bits(), ((0.1f32 + 0.7) + 1.3 * 2.0).to_bits());
        assert_eq!(b.total.to_bits(), total.item().unwrap().to_bits());
    }
}
