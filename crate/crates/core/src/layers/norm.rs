//! Batch normalization over the (batch, height, width) axes of a 4-D input.

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Saved values the backward pass needs; only produced in train mode.
#[derive(Clone, Debug)]
pub struct BatchNormCache<E: Element> {
    pub normalized: Tensor<E>,
    pub inv_std: Vec<E>,
}

/// Train mode normalizes with batch statistics and folds them into the
/// running buffers (`running = momentum * running + (1 - momentum) * batch`);
/// infer mode normalizes with the running buffers and touches nothing.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &mut Tensor<E>,
    running_var: &mut Tensor<E>,
    momentum: f64,
    epsilon: f64,
    mode: Mode,
) -> Result<(Tensor<E>, Option<BatchNormCache<E>>)> {
    if x.shape().len() != 4 {
        return Err(Error::InvalidShape(format!(
            "batchnorm input must be 4-D, got {:?}",
            x.shape()
        )));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if b == 0 {
        return Err(Error::InvalidShape("batchnorm on empty batch".into()));
    }
    if c != gamma.len() {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm expects {} channels, got {c}",
            gamma.len()
        )));
    }
    let n = E::from_usize(b * h * w).unwrap();
    let eps = E::from_double(epsilon);
    let xd = x.data();
    let plane = h * w;

    let per_channel = |ci: usize, f: &mut dyn FnMut(usize)| {
        for bi in 0..b {
            let base = ((bi * c + ci) * h) * w;
            for p in 0..plane {
                f(base + p);
            }
        }
    };

    let (mean, var): (Vec<E>, Vec<E>) = match mode {
        Mode::Train => {
            let mut mean = vec![E::zero(); c];
            let mut var = vec![E::zero(); c];
            for ci in 0..c {
                let mut s = E::zero();
                per_channel(ci, &mut |idx| s = s + xd[idx]);
                mean[ci] = s / n;
                let mut v = E::zero();
                per_channel(ci, &mut |idx| {
                    let d = xd[idx] - mean[ci];
                    v = v + d * d;
                });
                var[ci] = v / n;
            }
            let mom = E::from_double(momentum);
            let one_m = E::one() - mom;
            for ci in 0..c {
                running_mean.data_mut()[ci] = mom * running_mean.data()[ci] + one_m * mean[ci];
                running_var.data_mut()[ci] = mom * running_var.data()[ci] + one_m * var[ci];
            }
            (mean, var)
        }
        Mode::Infer => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };

    let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![E::zero(); xd.len()];
    let mut out = vec![E::zero(); xd.len()];
    for ci in 0..c {
        let (m, is) = (mean[ci], inv_std[ci]);
        let (g, bta) = (gamma.data()[ci], beta.data()[ci]);
        per_channel(ci, &mut |idx| {
            let xh = (xd[idx] - m) * is;
            xhat[idx] = xh;
            out[idx] = g * xh + bta;
        });
    }

    let y = Tensor::from_vec(x.shape(), out)?;
    let cache = match mode {
        Mode::Train => Some(BatchNormCache {
            normalized: Tensor::from_vec(x.shape(), xhat)?,
            inv_std,
        }),
        Mode::Infer => None,
    };
    Ok((y, cache))
}

/// Backward through the train-mode normalization, including the dependence of
/// the batch statistics on the input.
pub fn batchnorm_backward<E: Element>(
    cache: &BatchNormCache<E>,
    gamma: &Tensor<E>,
    grad_y: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let shape = cache.normalized.shape();
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let n = E::from_usize(b * h * w).unwrap();
    let gd = grad_y.data();
    let xh = cache.normalized.data();
    let plane = h * w;

    let mut grad_gamma = vec![E::zero(); c];
    let mut grad_beta = vec![E::zero(); c];
    let mut grad_x = vec![E::zero(); gd.len()];

    for ci in 0..c {
        // sums over the channel slice
        let mut sum_g = E::zero();
        let mut sum_gx = E::zero();
        for bi in 0..b {
            let base = ((bi * c + ci) * h) * w;
            for p in 0..plane {
                sum_g = sum_g + gd[base + p];
                sum_gx = sum_gx + gd[base + p] * xh[base + p];
            }
        }
        grad_beta[ci] = sum_g;
        grad_gamma[ci] = sum_gx;

        let scale = gamma.data()[ci] * cache.inv_std[ci] / n;
        for bi in 0..b {
            let base = ((bi * c + ci) * h) * w;
            for p in 0..plane {
                let idx = base + p;
                grad_x[idx] = scale * (n * gd[idx] - sum_g - xh[idx] * sum_gx);
            }
        }
    }

    Ok((
        Tensor::from_vec(shape, grad_x)?,
        Tensor::from_vec(&[c], grad_gamma)?,
        Tensor::from_vec(&[c], grad_beta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(y: &Tensor<f64>, ci: usize) -> (f64, f64) {
        let (b, c, h, w) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
        let mut vals = Vec::new();
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    vals.push(y.data()[y.idx4(bi, ci, i, j)]);
                }
            }
        }
        let _ = c;
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn train_mode_normalizes_per_channel() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::from_vec(
            &[2, 3, 4, 4],
            (0..96).map(|_| rng.gen_range(-3.0..5.0)).collect(),
        )
        .unwrap();
        let gamma = Tensor::ones(&[3]).unwrap();
        let beta = Tensor::zeros(&[3]).unwrap();
        let mut rm = Tensor::zeros(&[3]).unwrap();
        let mut rv = Tensor::ones(&[3]).unwrap();
        let (y, cache) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.9, 1e-5, Mode::Train).unwrap();
        assert!(cache.is_some());
        for ci in 0..3 {
            let (m, v) = stats(&y, ci);
            assert!(m.abs() < 1e-4, "mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
    }

    #[test]
    fn affine_scale_shift() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f64>::from_vec(
            &[4, 1, 3, 3],
            (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let gamma = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let beta = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let mut rm = Tensor::zeros(&[1]).unwrap();
        let mut rv = Tensor::ones(&[1]).unwrap();
        let (y, _) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.9, 1e-8, Mode::Train).unwrap();
        let (m, v) = stats(&y, 0);
        assert!((m - 3.0).abs() < 1e-4);
        assert!((v.sqrt() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn infer_identity_stats() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![0.5, -0.25, 1.0, 0.0]).unwrap();
        let gamma = Tensor::ones(&[1]).unwrap();
        let beta = Tensor::zeros(&[1]).unwrap();
        let mut rm = Tensor::zeros(&[1]).unwrap();
        let mut rv = Tensor::ones(&[1]).unwrap();
        let (y, cache) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.9, 1e-8, Mode::Infer).unwrap();
        assert!(cache.is_none());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        // a zero batch dim cannot even be constructed
        assert!(Tensor::<f64>::zeros(&[0, 1, 2, 2]).is_err());
    }
}
