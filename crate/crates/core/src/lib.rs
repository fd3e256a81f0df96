//! From-scratch convolutional-network library for endoscopy-style image
//! classification: dense tensors, hand-derived layer gradients, four compact
//! backbone families, an adaptive-moment optimizer, a deterministic data
//! pipeline, and evaluation metrics.

pub mod arch;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod synth;
pub mod tables;
pub mod tensor;
pub mod train;

pub use arch::{build_head, build_model, Arch, BackboneKind, ModelPlan};
pub use error::{Error, Result};
pub use graph::{GradStore, GraphBuilder, GraphCache, ModelGraph};
pub use layers::{LayerSpec, Mode, Padding};
pub use loss::{cross_entropy, fused_softmax_ce_gradient, loss_gradient, LossValue};
pub use metrics::{ClassMetrics, ConfusionMatrix, PredictionRecord};
pub use optim::{OptimizerConfig, OptimizerState, Variant};
pub use tensor::{Element, Tensor};
pub use train::{
    fit, transfer_load, validate, Checkpoint, EpochRecord, FitOutcome, Seeds, TrainConfig,
    TransferMode,
};
