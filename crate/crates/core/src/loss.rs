//! Cross-entropy loss over softmax probabilities, plus its gradient in both
//! the direct and the softmax-fused form.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Predictions are clamped to this floor before the log.
const CLAMP_MIN: f64 = 1e-12;

/// Per-sample cross-entropy losses and their batch mean.
#[derive(Clone, Debug)]
pub struct LossValue<E: Element> {
    pub per_sample: Tensor<E>,
    pub mean: E,
}

fn check_pair<E: Element>(y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<()> {
    if y_true.shape() != y_pred.shape() || y_true.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "loss expects matching [B, K] tensors, got {:?} vs {:?}",
            y_true.shape(),
            y_pred.shape()
        )));
    }
    let k = y_true.shape()[1];
    for row in y_true.data().chunks(k) {
        let ones = row.iter().filter(|&&v| v == E::one()).count();
        let zeros = row.iter().filter(|&&v| v == E::zero()).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::NumericDomain("labels must be one-hot".into()));
        }
    }
    Ok(())
}

/// `loss_b = -sum_i y_i ln(clamp(p_i))`, mean over the batch.
pub fn cross_entropy<E: Element>(y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<LossValue<E>> {
    check_pair(y_true, y_pred)?;
    let k = y_true.shape()[1];
    let clamp_min = E::from_double(CLAMP_MIN);
    let mut per_sample = Vec::with_capacity(y_true.shape()[0]);
    for (trow, prow) in y_true.data().chunks(k).zip(y_pred.data().chunks(k)) {
        let mut l = E::zero();
        for (&t, &p) in trow.iter().zip(prow) {
            if t == E::one() {
                let p = if p < clamp_min {
                    clamp_min
                } else if p > E::one() {
                    E::one()
                } else {
                    p
                };
                l = l - p.ln();
            }
        }
        per_sample.push(l);
    }
    let per_sample = Tensor::from_vec(&[y_true.shape()[0]], per_sample)?;
    let mean = per_sample.mean();
    Ok(LossValue { per_sample, mean })
}

/// Gradient of the mean loss w.r.t. the probabilities: `-y / (B * p)`.
pub fn loss_gradient<E: Element>(y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<Tensor<E>> {
    check_pair(y_true, y_pred)?;
    let b = E::from_usize(y_true.shape()[0]).unwrap();
    let clamp_min = E::from_double(CLAMP_MIN);
    let mut grad = y_pred.zeros_like();
    for ((g, &t), &p) in grad.data_mut().iter_mut().zip(y_true.data()).zip(y_pred.data()) {
        if t == E::one() {
            let p = if p < clamp_min { clamp_min } else { p };
            *g = -E::one() / (b * p);
        }
    }
    Ok(grad)
}

/// Gradient of the mean loss w.r.t. the softmax *logits*: `(p - y) / B`.
pub fn fused_softmax_ce_gradient<E: Element>(
    y_true: &Tensor<E>,
    y_pred: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_pair(y_true, y_pred)?;
    let b = E::from_usize(y_true.shape()[0]).unwrap();
    Ok(y_pred.sub(y_true)?.map(|v| v / b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(b: usize, k: usize, class: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[b, k]).unwrap();
        for bi in 0..b {
            t.data_mut()[bi * k + class] = 1.0;
        }
        t
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let y = one_hot(2, 4, 1);
        let l = cross_entropy(&y, &y).unwrap();
        assert!(l.mean <= 1e-9);
        assert!(l.per_sample.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn uniform_over_eight_is_ln8() {
        let y = one_hot(1, 8, 3);
        let p = Tensor::full(&[1, 8], 0.125).unwrap();
        let l = cross_entropy(&y, &p).unwrap();
        assert!((l.mean - 8.0f64.ln()).abs() < 1e-6);
        assert!((l.mean - 2.0794415).abs() < 1e-6);
    }

    #[test]
    fn half_probability() {
        let y = one_hot(1, 2, 0);
        let p = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        let l = cross_entropy(&y, &p).unwrap();
        assert!((l.mean - 0.6931472).abs() < 1e-6);
    }

    #[test]
    fn non_one_hot_rejected() {
        let y = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        let p = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        assert!(cross_entropy(&y, &p).is_err());
    }

    #[test]
    fn fused_gradient_at_perfect_prediction_is_zero() {
        let y = one_hot(1, 4, 2);
        let g = fused_softmax_ce_gradient(&y, &y).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fused_gradient_uniform_eight() {
        let y = one_hot(1, 8, 0);
        let p = Tensor::full(&[1, 8], 0.125).unwrap();
        let g = fused_softmax_ce_gradient(&y, &p).unwrap();
        assert!((g.data()[0] - (0.125 - 1.0)).abs() < 1e-12);
        for &v in &g.data()[1..] {
            assert!((v - 0.125).abs() < 1e-12);
        }
    }
}
