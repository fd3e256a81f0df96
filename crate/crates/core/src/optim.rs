//! Adaptive-moment optimizer.
//!
//! The default update keeps a running elementwise maximum of the second
//! moment and applies no bias correction, with epsilon inside the square
//! root:
//!
//! ```text
//! m      = b1 * m + (1 - b1) * g
//! v      = b2 * v + (1 - b2) * g^2
//! v_max  = max(v_max, v)
//! theta -= lr * m / sqrt(v_max + eps)
//! ```
//!
//! `Variant::CanonicalAdam` switches to the textbook Adam update
//! (bias-corrected moments, no running max, epsilon outside the root) for
//! comparison runs.

use crate::error::{Error, Result};
use crate::graph::GradStore;
use crate::tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Running-max second moment, no bias correction.
    #[default]
    MaxSecondMoment,
    CanonicalAdam,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub variant: Variant,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            variant: Variant::MaxSecondMoment,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<E: Element> {
    m: Tensor<E>,
    v: Tensor<E>,
    v_max: Tensor<E>,
}

/// Per-parameter moments plus the shared step counter; all zero at `t = 0`.
#[derive(Clone, Debug)]
pub struct OptimizerState<E: Element> {
    pub config: OptimizerConfig,
    step: u64,
    moments: BTreeMap<String, Moments<E>>,
}

impl<E: Element> OptimizerState<E> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Running-max second moment of one parameter, if it has been touched.
    pub fn v_max(&self, name: &str) -> Option<&Tensor<E>> {
        self.moments.get(name).map(|m| &m.v_max)
    }

    /// First moment of one parameter, if it has been touched.
    pub fn first_moment(&self, name: &str) -> Option<&Tensor<E>> {
        self.moments.get(name).map(|m| &m.m)
    }

    /// One update over every `(name, tensor)` pair that has a gradient.
    ///
    /// Parameters without a gradient entry (frozen ones) are left untouched,
    /// as are their moments.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<E>)],
        grads: &GradStore<E>,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "gradient for {name} is not finite"
                )));
            }
        }
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let lr = E::from_double(cfg.learning_rate);
        let b1 = E::from_double(cfg.beta1);
        let b2 = E::from_double(cfg.beta2);
        let eps = E::from_double(cfg.epsilon);
        let one = E::one();

        for (name, param) in params.iter_mut() {
            let Some(g) = grads.get(name) else {
                continue;
            };
            if g.shape() != param.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient shape {:?} vs parameter {name} {:?}",
                    g.shape(),
                    param.shape()
                )));
            }
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: g.zeros_like(),
                v: g.zeros_like(),
                v_max: g.zeros_like(),
            });

            for i in 0..g.len() {
                let gi = g.data()[i];
                let m = b1 * mom.m.data()[i] + (one - b1) * gi;
                let v = b2 * mom.v.data()[i] + (one - b2) * gi * gi;
                mom.m.data_mut()[i] = m;
                mom.v.data_mut()[i] = v;
                let delta = match cfg.variant {
                    Variant::MaxSecondMoment => {
                        let vm = if v > mom.v_max.data()[i] {
                            v
                        } else {
                            mom.v_max.data()[i]
                        };
                        mom.v_max.data_mut()[i] = vm;
                        lr * m / (vm + eps).sqrt()
                    }
                    Variant::CanonicalAdam => {
                        let bc1 = one - E::from_double(cfg.beta1.powi(t as i32));
                        let bc2 = one - E::from_double(cfg.beta2.powi(t as i32));
                        let m_hat = m / bc1;
                        let v_hat = v / bc2;
                        lr * m_hat / (v_hat.sqrt() + eps)
                    }
                };
                let p = param.data_mut();
                p[i] = p[i] - delta;
            }
        }
        Ok(())
    }
}
