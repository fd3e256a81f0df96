//! Finite-difference gradient checking harness.
//!
//! Runs models in double precision and compares analytic gradients against
//! central differences on sampled input and parameter coordinates, using a
//! weighted-sum objective over the graph output.

use crate::graph::ModelGraph;
use crate::layers::Mode;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const STEP: f64 = 1e-6;
/// Relative-error bound: `|a - n| / max(|a|, |n|, 1)`.
pub const TOLERANCE: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

fn objective(model: &ModelGraph<f64>, x: &Tensor<f64>, w: &[f64]) -> f64 {
    let mut m = model.clone();
    let (y, _) = m.forward(x, Mode::Train).expect("forward");
    y.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

fn sample_indices(len: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= k {
        (0..len).collect()
    } else {
        (0..k).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Checks `trials` random inputs against the numeric oracle; returns a
/// description of the first violation, if any.
pub fn check_model(
    label: &str,
    model: &ModelGraph<f64>,
    input_shape: &[usize],
    trials: usize,
    seed: u64,
) -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_len: usize = input_shape.iter().product();

    for trial in 0..trials {
        let x = Tensor::from_vec(
            input_shape,
            (0..in_len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        // Jitter every parameter: zero-initialized biases otherwise leave
        // pre-activations sitting exactly on ReLU kinks (an all-zero window
        // convolved with any kernel plus a zero bias is exactly zero), where
        // finite differences and the subgradient legitimately disagree.
        let mut model = model.clone();
        for (_, t) in model.parameters_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
        let model = &model;
        let mut fwd = model.clone();
        let (y, cache) = fwd.forward(&x, Mode::Train).expect("forward");
        let w: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad_out = Tensor::from_vec(y.shape(), w.clone()).unwrap();
        let (grads, gx) = fwd.backward(&cache, &grad_out).expect("backward");

        for idx in sample_indices(in_len, 6, &mut rng) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data_mut()[idx] += STEP;
            xm.data_mut()[idx] -= STEP;
            let numeric =
                (objective(model, &xp, &w) - objective(model, &xm, &w)) / (2.0 * STEP);
            let analytic = gx.data()[idx];
            if rel_err(analytic, numeric) > TOLERANCE {
                return Err(format!(
                    "{label} trial {trial}: input[{idx}] analytic {analytic} vs numeric {numeric}"
                ));
            }
        }

        let names: Vec<String> = grads.keys().cloned().collect();
        for name in names {
            let len = grads[&name].len();
            for idx in sample_indices(len, 4, &mut rng) {
                let perturbed = |delta: f64| {
                    let mut m = model.clone();
                    for (n, t) in m.parameters_mut() {
                        if n == name {
                            t.data_mut()[idx] += delta;
                        }
                    }
                    objective(&m, &x, &w)
                };
                let numeric = (perturbed(STEP) - perturbed(-STEP)) / (2.0 * STEP);
                let analytic = grads[&name].data()[idx];
                if rel_err(analytic, numeric) > TOLERANCE {
                    return Err(format!(
                        "{label} trial {trial}: {name}[{idx}] analytic {analytic} vs numeric {numeric}"
                    ));
                }
            }
        }
    }
    Ok(())
}
