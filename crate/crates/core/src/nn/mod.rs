//! Minimal deterministic neural-network engine: dense and 2-D convolution
//! layers with exact backpropagation, SGD with momentum, and the
//! cross-entropy / tempered-softmax / distillation losses.

mod kernels;
mod loss;
mod network;
mod spec;
mod train;

use thiserror::Error;

use crate::tensor::TensorError;

pub use loss::{
    argmax, cross_entropy, kd_composite_loss, log_softmax_rows, predict_classes, softmax_rows,
    softmax_temperature,
};
pub use network::{
    backward, forward, init_network, param_count, penultimate_embeddings, predict_proba,
    ForwardCache, Gradients, LayerParams, Network,
};
pub use spec::{forward_flops, layer_flops, ActShape, LayerSpec, NetworkSpec};
pub use train::{accuracy, sgd_step, train, EpochStats, KdConfig, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer {layer}: {reason}")]
    InvalidSpec { layer: usize, reason: String },
    #[error("input shape mismatch: expected {expected:?}, got {actual:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("label {label} at row {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("distillation weight must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("logit shapes differ: {left:?} vs {right:?}")]
    LogitShape { left: Vec<usize>, right: Vec<usize> },
    #[error("{0} labels supplied for {1} logit rows")]
    LabelCount(usize, usize),
    #[error("activation cache does not belong to this network state")]
    StaleCache,
    #[error("parameter shape mismatch at parametric layer {layer}")]
    ParamShape { layer: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("teacher has {teacher} classes but student has {student}")]
    ClassMismatch { student: usize, teacher: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
