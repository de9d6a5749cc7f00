//! Temporal sets prediction: given each user's chronologically ordered
//! sequence of timestamped element sets, predict which elements appear in the
//! next set.
//!
//! The crate provides the full pipeline:
//!
//! - [`data`]: log ingestion, frequency-based preprocessing, train/validation/
//!   test splits under transductive and inductive protocols.
//! - [`setbatch`]: the conflict-free batch planner that groups interactions
//!   into time-consistent mini-batches (no batch contains two events sharing
//!   a user or an element).
//! - [`numerics`]: a minimal reverse-mode autodiff tape over dense tensors,
//!   with masked softmax, cross-entropy, dropout, Adam and a cosine learning
//!   rate schedule.
//! - [`memory`]: the evolving (non-trainable) memory bank of user and element
//!   state vectors plus per-user interaction histories.
//! - [`model`]: attention message encoders, gated memory updaters,
//!   dual-perspective history aggregation, the prediction layer, and the
//!   batched training loop.
//! - [`eval`]: Recall/NDCG/PHR at K, frequency baselines, and the evaluation
//!   protocols.
//! - [`checkpoint`]: flat-binary + JSON-index serialization of parameters,
//!   optimizer state and memory bank.
//!
//! All numeric code is generic over the scalar type via [`scalar::Real`];
//! concrete `f64` aliases are exported at the crate root. `f64` is the
//! reference precision: gradient checks and the acceptance suite run in it.

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod memory;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod setbatch;
pub mod synthetic;

pub use scalar::{real, Real};

/// Dense tensor in the reference precision.
pub type Tensor64 = numerics::Tensor<f64>;
/// Dense tensor in single precision.
pub type Tensor32 = numerics::Tensor<f32>;
/// Autodiff tape in the reference precision.
pub type Tape64 = numerics::Tape<f64>;
/// Model parameters in the reference precision.
pub type ModelParameters64 = model::ModelParameters<f64>;
/// Memory bank in the reference precision.
pub type MemoryBank64 = memory::MemoryBank<f64>;
/// Per-(user, time) score vector in the reference precision.
pub type ScoreVector64 = model::ScoreVector<f64>;
