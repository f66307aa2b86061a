//! A small differentiable core.
//!
//! Layers own their parameters and cache what their backward pass needs, so
//! a network is a plain composition of `forward` calls followed by `backward`
//! calls in reverse order. Feature maps are `[batch, channels, width]`;
//! fully connected activations are `[batch, features]`.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod optim;
mod param;
mod real;
mod tensor;

pub use checkpoint::{
    apply_checkpoint, load_checkpoint, save_checkpoint, CheckpointEntry, CheckpointManifest,
};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layers::{
    conv_output_width, BatchNorm1d, Conv1d, ConvTranspose1d, GlobalAvgPool, Linear, MaxPool1d,
    Relu,
};
pub use loss::{
    cross_entropy, softmax, softmax_cross_entropy, weighted_mse, ClassificationLoss,
    ReconstructionLoss, LOG_FLOOR,
};
pub use optim::{Adam, GroupRates};
pub use param::{LearningGroup, Module, ParamKind, Parameter};
pub use real::Real;
pub use tensor::Tensor;

/// Layer behaviour switch; batchnorm uses batch statistics in `Train` and its
/// running statistics in `Eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
