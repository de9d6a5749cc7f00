//! Minimal differentiable-computation core: dense tensors with reverse-mode
//! gradients, masked softmax, cross-entropy, dropout, Adam with a cosine
//! learning-rate schedule and a finite-difference gradient checker.
//!
//! Everything runs on the CPU over plain `Vec` storage; 64-bit reals are the
//! reference precision.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use optim::{cosine_lr, AdamState, LrSchedule};
pub use tape::{Gradients, Tape, Var, BCE_CLAMP};
pub use tensor::{Shape, Tensor};

/// Errors produced by tensor and tape operations.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("matrix construction: {rows}x{cols} does not match data length {len}")]
    BadConstruction { rows: usize, cols: usize, len: usize },
    #[error("softmax: row {row} is fully masked")]
    EmptySoftmaxRow { row: usize },
    #[error("{op}: index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("backward: loss must be a scalar, got {shape}")]
    NonScalarLoss { shape: Shape },
    #[error("learning-rate schedule: epoch {epoch} outside [0, {t_max}]")]
    EpochOutOfRange { epoch: usize, t_max: usize },
    #[error("dropout rate {rate} outside [0, 1)")]
    BadDropoutRate { rate: f64 },
    #[error("gradient check: non-finite loss")]
    NonFiniteLoss,
}
