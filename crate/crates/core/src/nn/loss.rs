use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{s, Scalar, Tensor};

const BCE_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Binary cross-entropy, averaged over all elements.
    Bce,
    /// Mean squared error.
    Mse,
}

/// Mean loss over every element and its gradient with respect to `prediction`.
///
/// For `Bce` the predictions are clipped to `[1e-7, 1 - 1e-7]` before the
/// logarithm; the gradient is evaluated at the clipped value so saturated
/// predictions still receive a learning signal.
pub fn loss_eval<T: Scalar>(
    prediction: &Tensor<T>,
    target: &Tensor<T>,
    kind: LossKind,
) -> Result<(T, Tensor<T>)> {
    if prediction.shape() != target.shape() {
        return Err(shape_err!(
            "loss: prediction {:?} vs target {:?}",
            prediction.shape(),
            target.shape()
        ));
    }
    let n = s::<T>(prediction.len() as f64);
    let one = T::one();
    let mut total = T::zero();
    let mut grad = Tensor::zeros(prediction.shape());
    let pairs = prediction.data().iter().zip(target.data());
    match kind {
        LossKind::Mse => {
            for ((&p, &y), g) in pairs.zip(grad.data_mut()) {
                let d = p - y;
                total += d * d;
                *g = s::<T>(2.0) * d / n;
            }
        }
        LossKind::Bce => {
            let lo = s::<T>(BCE_CLIP);
            let hi = one - lo;
            for ((&p, &y), g) in pairs.zip(grad.data_mut()) {
                let pc = p.max(lo).min(hi);
                total -= y * pc.ln() + (one - y) * (one - pc).ln();
                *g = (pc - y) / (pc * (one - pc)) / n;
            }
        }
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn mse_of_equal_is_zero() {
        let x = t(&[0.3, -1.0, 2.0]);
        let (l, g) = loss_eval(&x, &x, LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bce_half_is_ln2() {
        let (l, _) = loss_eval(&t(&[0.5]), &t(&[1.0]), LossKind::Bce).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_is_clip_limited() {
        let (l, _) = loss_eval(&t(&[1.0, 0.0]), &t(&[1.0, 0.0]), LossKind::Bce).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(loss_eval(&t(&[0.5]), &t(&[1.0, 0.0]), LossKind::Mse).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let p = t(&[0.2, 0.7, 0.45, 0.9]);
        let y = t(&[0.0, 1.0, 0.3, 0.8]);
        for kind in [LossKind::Bce, LossKind::Mse] {
            let (_, g) = loss_eval(&p, &y, kind).unwrap();
            let err = crate::nn::finite_diff_gradcheck(
                |x| loss_eval(&t(x), &y, kind).unwrap().0,
                p.data(),
                g.data(),
                1e-5,
            );
            assert!(err < 1e-6, "{kind:?}: {err}");
        }
    }
}
