//! Layer kinds with hand-derived forward and reverse-mode backward passes.

mod conv;
mod dense;
mod norm;
mod pool;

pub use conv::{conv2d_backward, conv2d_forward, depthwise_backward, depthwise_forward};
pub use dense::{
    add_forward, concat_backward, concat_forward, dense_backward, dense_forward, relu_backward,
    relu_forward, softmax_backward, softmax_forward,
};
pub use norm::{batchnorm_backward, batchnorm_forward, BatchNormCache};
pub use pool::{maxpool_backward, maxpool_forward};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

/// Whether batchnorm uses batch statistics (train) or running ones (infer).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Placeholder for the graph input; per-sample shape `[C, H, W]`.
    Input { shape: Vec<usize> },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    DepthwiseConv2d {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    MaxPool {
        size: usize,
        stride: usize,
        padding: Padding,
    },
    BatchNorm {
        channels: usize,
        momentum: f64,
        epsilon: f64,
    },
    Dense { in_dim: usize, out_dim: usize },
    Relu,
    Flatten,
    Softmax,
    Add,
    Concat,
}

impl LayerSpec {
    /// The halving pool used between stages.
    pub fn max_pool_2x2() -> Self {
        LayerSpec::MaxPool {
            size: 2,
            stride: 2,
            padding: Padding::Valid,
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        LayerSpec::BatchNorm {
            channels,
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Graph(msg));
        match *self {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                ..
            } => {
                if kernel % 2 == 0 || !(1..=7).contains(&kernel) {
                    return bad(format!("conv kernel must be odd in 1..=7, got {kernel}"));
                }
                if stride < 1 || in_ch < 1 || out_ch < 1 {
                    return bad("conv stride and channel counts must be >= 1".into());
                }
            }
            LayerSpec::DepthwiseConv2d {
                channels,
                kernel,
                stride,
                ..
            } => {
                if kernel % 2 == 0 || !(1..=7).contains(&kernel) {
                    return bad(format!("depthwise kernel must be odd in 1..=7, got {kernel}"));
                }
                if stride < 1 || channels < 1 {
                    return bad("depthwise stride and channels must be >= 1".into());
                }
            }
            LayerSpec::MaxPool { size, stride, .. } => {
                if size < 2 || stride < 1 {
                    return bad("pool size must be >= 2 and stride >= 1".into());
                }
            }
            LayerSpec::BatchNorm {
                channels, epsilon, ..
            } => {
                if channels < 1 || epsilon <= 0.0 {
                    return bad("batchnorm needs channels >= 1 and epsilon > 0".into());
                }
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim < 1 || out_dim < 1 {
                    return bad("dense dims must be >= 1".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parameters and buffers owned by one graph node.
///
/// `params` receive gradients and optimizer updates; `buffers` (batchnorm
/// running statistics) are updated by the forward pass in train mode.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<E: Element> {
    pub params: Vec<(String, Tensor<E>)>,
    pub buffers: Vec<(String, Tensor<E>)>,
}

impl<E: Element> LayerState<E> {
    pub fn empty() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn param(&self, name: &str) -> &Tensor<E> {
        &self
            .params
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing param {name}"))
            .1
    }

    pub fn buffer(&self, name: &str) -> &Tensor<E> {
        &self
            .buffers
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing buffer {name}"))
            .1
    }

    pub fn buffer_mut(&mut self, name: &str) -> &mut Tensor<E> {
        &mut self
            .buffers
            .iter_mut()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing buffer {name}"))
            .1
    }
}

/// Draw from N(0, std) via Box-Muller, so init only depends on the seeded rng.
fn normal<E: Element, R: Rng>(rng: &mut R, std: f64) -> E {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    E::from_double(z * std)
}

fn he_normal<E: Element, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<E> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal(rng, std)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// He-normal kernels/weights, zero biases, gamma=1 / beta=0, running var 1.
pub fn init_state<E: Element, R: Rng>(spec: &LayerSpec, rng: &mut R) -> LayerState<E> {
    let mut state = LayerState::empty();
    match *spec {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            ..
        } => {
            let fan_in = in_ch * kernel * kernel;
            state.params.push((
                "kernel".into(),
                he_normal(rng, &[out_ch, in_ch, kernel, kernel], fan_in),
            ));
            state
                .params
                .push(("bias".into(), Tensor::zeros(&[out_ch]).unwrap()));
        }
        LayerSpec::DepthwiseConv2d {
            channels, kernel, ..
        } => {
            let fan_in = kernel * kernel;
            state.params.push((
                "kernel".into(),
                he_normal(rng, &[channels, kernel, kernel], fan_in),
            ));
            state
                .params
                .push(("bias".into(), Tensor::zeros(&[channels]).unwrap()));
        }
        LayerSpec::BatchNorm { channels, .. } => {
            state
                .params
                .push(("gamma".into(), Tensor::ones(&[channels]).unwrap()));
            state
                .params
                .push(("beta".into(), Tensor::zeros(&[channels]).unwrap()));
            state
                .buffers
                .push(("running_mean".into(), Tensor::zeros(&[channels]).unwrap()));
            state
                .buffers
                .push(("running_var".into(), Tensor::ones(&[channels]).unwrap()));
        }
        LayerSpec::Dense { in_dim, out_dim } => {
            state
                .params
                .push(("weight".into(), he_normal(rng, &[in_dim, out_dim], in_dim)));
            state
                .params
                .push(("bias".into(), Tensor::zeros(&[out_dim]).unwrap()));
        }
        _ => {}
    }
    state
}

/// Output spatial dim of a conv/pool window op.
pub fn out_dim(input: usize, window: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => input.div_ceil(stride),
        Padding::Valid => (input.saturating_sub(window)) / stride + 1,
    }
}

/// Leading pad for `Same` padding (zero for `Valid`).
pub fn pad_before(input: usize, window: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Valid => 0,
        Padding::Same => {
            let out = out_dim(input, window, stride, padding);
            ((out - 1) * stride + window).saturating_sub(input) / 2
        }
    }
}
