//! The temporal-sets network: attention message encoders, gated memory
//! updaters, dual-perspective history aggregation, the prediction layer and
//! the batched training loop.

mod forward;
mod train;

pub use forward::{
    continuous_time_scores, encode_element_messages, encode_user_message, fuse_scores,
    personalized_aggregation, personalized_scores_from_history, process_batch, score_user,
    update_element_memories, update_user_memory, BatchOutput, EventRef,
};
pub use train::{bench_epoch, run_training, training_loss, BenchReport, EpochLog, TrainConfig, TrainingRun};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ElementId, UserId};
use crate::memory::MemoryError;
use crate::numerics::{NumericsError, Shape, Tape, Tensor, Var};
use crate::scalar::{real, Real};
use crate::setbatch::BatchPlanError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    BatchPlan(#[from] BatchPlanError),
    #[error("event {event} has an empty set")]
    EmptySet { event: usize },
    #[error("element {element} has indicator 1 but no continuous-time score")]
    MissingContinuousScore { element: ElementId },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("{0}")]
    Protocol(String),
}

/// Hyperparameters that shape the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub dropout: f64,
    /// Weight of the user perspective in history aggregation (0..=1).
    pub lambda_user: f64,
    /// Weight of the continuous-time probability in fusion (0..=1).
    pub lambda_continuous: f64,
    /// Whether an element's attention pool includes the element itself in
    /// addition to the user and the other set elements.
    pub include_self_in_pool: bool,
    /// Negative slope of the LeakyReLU used in history aggregation.
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 64,
            dropout: 0.0,
            lambda_user: 0.5,
            lambda_continuous: 0.5,
            include_self_in_pool: true,
            leaky_slope: 0.01,
        }
    }
}

/// Query/key/value affine projections of one attention encoder.
///
/// The biases are what break the all-zero fixed point of freshly initialized
/// memories: without them, messages computed from zero memories are zero and
/// every update stays zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub query: Tensor<T>,
    pub query_bias: Tensor<T>,
    pub key: Tensor<T>,
    pub key_bias: Tensor<T>,
    pub value: Tensor<T>,
    pub value_bias: Tensor<T>,
}

/// Gated-updater weights: affine projections aligning message (`d x 2d`) and
/// memory (`d x d`) plus the two gate projections weighing them per
/// dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams<T> {
    pub message_proj: Tensor<T>,
    pub message_proj_bias: Tensor<T>,
    pub memory_proj: Tensor<T>,
    pub memory_proj_bias: Tensor<T>,
    pub message_gate: Tensor<T>,
    pub message_gate_bias: Tensor<T>,
    pub memory_gate: Tensor<T>,
    pub memory_gate_bias: Tensor<T>,
}

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<T> {
    pub dim: usize,
    pub num_elements: usize,
    pub user_encoder: AttentionParams<T>,
    pub element_encoder: AttentionParams<T>,
    pub user_updater: GateParams<T>,
    pub element_updater: GateParams<T>,
    /// Static user embedding, shared across users (`1 x d`).
    pub user_embedding: Tensor<T>,
    /// Static element embeddings (`n x d`).
    pub element_embeddings: Tensor<T>,
    /// Transformation applied to aggregated history rows before scoring.
    pub score_transform: Tensor<T>,
    /// Single-layer projection giving stored memories a gradient path.
    pub history_proj_w: Tensor<T>,
    pub history_proj_b: Tensor<T>,
}

/// Tape handles for every parameter, in registration order.
#[derive(Clone, Copy, Debug)]
pub struct AttnVars {
    pub query: Var,
    pub query_bias: Var,
    pub key: Var,
    pub key_bias: Var,
    pub value: Var,
    pub value_bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub message_proj: Var,
    pub message_proj_bias: Var,
    pub memory_proj: Var,
    pub memory_proj_bias: Var,
    pub message_gate: Var,
    pub message_gate_bias: Var,
    pub memory_gate: Var,
    pub memory_gate_bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub user_encoder: AttnVars,
    pub element_encoder: AttnVars,
    pub user_updater: GateVars,
    pub element_updater: GateVars,
    pub user_embedding: Var,
    pub element_embeddings: Var,
    pub score_transform: Var,
    pub history_proj_w: Var,
    pub history_proj_b: Var,
}

impl<T: Real> ModelParameters<T> {
    /// Random initialization: embeddings from a standard normal, weight
    /// matrices uniform in `[-1/sqrt(d), 1/sqrt(d)]`, zero projection bias.
    pub fn init(dim: usize, num_elements: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let user_encoder = Self::init_attention(dim, bound, rng);
        let element_encoder = Self::init_attention(dim, bound, rng);
        let user_updater = Self::init_gate(dim, bound, rng);
        let element_updater = Self::init_gate(dim, bound, rng);
        let score_transform = uniform_tensor(dim, dim, bound, rng);
        let history_proj_w = uniform_tensor(dim, dim, bound, rng);
        let user_embedding = normal_tensor(1, dim, rng);
        let element_embeddings = normal_tensor(num_elements, dim, rng);

        ModelParameters {
            dim,
            num_elements,
            user_encoder,
            element_encoder,
            user_updater,
            element_updater,
            user_embedding,
            element_embeddings,
            score_transform,
            history_proj_w,
            history_proj_b: Tensor::zeros(Shape::Vector(dim)),
        }
    }

    fn init_attention(dim: usize, bound: f64, rng: &mut impl Rng) -> AttentionParams<T> {
        AttentionParams {
            query: uniform_tensor(dim, dim, bound, rng),
            query_bias: uniform_vector(dim, bound, rng),
            key: uniform_tensor(dim, dim, bound, rng),
            key_bias: uniform_vector(dim, bound, rng),
            value: uniform_tensor(dim, dim, bound, rng),
            value_bias: uniform_vector(dim, bound, rng),
        }
    }

    fn init_gate(dim: usize, bound: f64, rng: &mut impl Rng) -> GateParams<T> {
        GateParams {
            message_proj: uniform_tensor(dim, 2 * dim, bound, rng),
            message_proj_bias: uniform_vector(dim, bound, rng),
            memory_proj: uniform_tensor(dim, dim, bound, rng),
            memory_proj_bias: uniform_vector(dim, bound, rng),
            message_gate: uniform_tensor(dim, dim, bound, rng),
            message_gate_bias: uniform_vector(dim, bound, rng),
            memory_gate: uniform_tensor(dim, dim, bound, rng),
            memory_gate_bias: uniform_vector(dim, bound, rng),
        }
    }

    /// All-zero parameters (useful for fixed-point tests and as a neutral
    /// starting state).
    pub fn zeros(dim: usize, num_elements: usize) -> Self {
        let mat = |r, c| Tensor::zeros(Shape::Matrix(r, c));
        let vec = || Tensor::zeros(Shape::Vector(dim));
        let attention = || AttentionParams {
            query: mat(dim, dim),
            query_bias: vec(),
            key: mat(dim, dim),
            key_bias: vec(),
            value: mat(dim, dim),
            value_bias: vec(),
        };
        let gate = || GateParams {
            message_proj: mat(dim, 2 * dim),
            message_proj_bias: vec(),
            memory_proj: mat(dim, dim),
            memory_proj_bias: vec(),
            message_gate: mat(dim, dim),
            message_gate_bias: vec(),
            memory_gate: mat(dim, dim),
            memory_gate_bias: vec(),
        };
        ModelParameters {
            dim,
            num_elements,
            user_encoder: attention(),
            element_encoder: attention(),
            user_updater: gate(),
            element_updater: gate(),
            user_embedding: mat(1, dim),
            element_embeddings: mat(num_elements, dim),
            score_transform: mat(dim, dim),
            history_proj_w: mat(dim, dim),
            history_proj_b: Tensor::zeros(Shape::Vector(dim)),
        }
    }

    /// Stable (name, tensor) listing; the order defines optimizer and
    /// checkpoint layout.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("user_encoder.query", &self.user_encoder.query),
            ("user_encoder.query_bias", &self.user_encoder.query_bias),
            ("user_encoder.key", &self.user_encoder.key),
            ("user_encoder.key_bias", &self.user_encoder.key_bias),
            ("user_encoder.value", &self.user_encoder.value),
            ("user_encoder.value_bias", &self.user_encoder.value_bias),
            ("element_encoder.query", &self.element_encoder.query),
            ("element_encoder.query_bias", &self.element_encoder.query_bias),
            ("element_encoder.key", &self.element_encoder.key),
            ("element_encoder.key_bias", &self.element_encoder.key_bias),
            ("element_encoder.value", &self.element_encoder.value),
            ("element_encoder.value_bias", &self.element_encoder.value_bias),
            ("user_updater.message_proj", &self.user_updater.message_proj),
            ("user_updater.message_proj_bias", &self.user_updater.message_proj_bias),
            ("user_updater.memory_proj", &self.user_updater.memory_proj),
            ("user_updater.memory_proj_bias", &self.user_updater.memory_proj_bias),
            ("user_updater.message_gate", &self.user_updater.message_gate),
            ("user_updater.message_gate_bias", &self.user_updater.message_gate_bias),
            ("user_updater.memory_gate", &self.user_updater.memory_gate),
            ("user_updater.memory_gate_bias", &self.user_updater.memory_gate_bias),
            ("element_updater.message_proj", &self.element_updater.message_proj),
            ("element_updater.message_proj_bias", &self.element_updater.message_proj_bias),
            ("element_updater.memory_proj", &self.element_updater.memory_proj),
            ("element_updater.memory_proj_bias", &self.element_updater.memory_proj_bias),
            ("element_updater.message_gate", &self.element_updater.message_gate),
            ("element_updater.message_gate_bias", &self.element_updater.message_gate_bias),
            ("element_updater.memory_gate", &self.element_updater.memory_gate),
            ("element_updater.memory_gate_bias", &self.element_updater.memory_gate_bias),
            ("user_embedding", &self.user_embedding),
            ("element_embeddings", &self.element_embeddings),
            ("score_transform", &self.score_transform),
            ("history_proj.weight", &self.history_proj_w),
            ("history_proj.bias", &self.history_proj_b),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("user_encoder.query", &mut self.user_encoder.query),
            ("user_encoder.query_bias", &mut self.user_encoder.query_bias),
            ("user_encoder.key", &mut self.user_encoder.key),
            ("user_encoder.key_bias", &mut self.user_encoder.key_bias),
            ("user_encoder.value", &mut self.user_encoder.value),
            ("user_encoder.value_bias", &mut self.user_encoder.value_bias),
            ("element_encoder.query", &mut self.element_encoder.query),
            ("element_encoder.query_bias", &mut self.element_encoder.query_bias),
            ("element_encoder.key", &mut self.element_encoder.key),
            ("element_encoder.key_bias", &mut self.element_encoder.key_bias),
            ("element_encoder.value", &mut self.element_encoder.value),
            ("element_encoder.value_bias", &mut self.element_encoder.value_bias),
            ("user_updater.message_proj", &mut self.user_updater.message_proj),
            ("user_updater.message_proj_bias", &mut self.user_updater.message_proj_bias),
            ("user_updater.memory_proj", &mut self.user_updater.memory_proj),
            ("user_updater.memory_proj_bias", &mut self.user_updater.memory_proj_bias),
            ("user_updater.message_gate", &mut self.user_updater.message_gate),
            ("user_updater.message_gate_bias", &mut self.user_updater.message_gate_bias),
            ("user_updater.memory_gate", &mut self.user_updater.memory_gate),
            ("user_updater.memory_gate_bias", &mut self.user_updater.memory_gate_bias),
            ("element_updater.message_proj", &mut self.element_updater.message_proj),
            ("element_updater.message_proj_bias", &mut self.element_updater.message_proj_bias),
            ("element_updater.memory_proj", &mut self.element_updater.memory_proj),
            ("element_updater.memory_proj_bias", &mut self.element_updater.memory_proj_bias),
            ("element_updater.message_gate", &mut self.element_updater.message_gate),
            ("element_updater.message_gate_bias", &mut self.element_updater.message_gate_bias),
            ("element_updater.memory_gate", &mut self.element_updater.memory_gate),
            ("element_updater.memory_gate_bias", &mut self.element_updater.memory_gate_bias),
            ("user_embedding", &mut self.user_embedding),
            ("element_embeddings", &mut self.element_embeddings),
            ("score_transform", &mut self.score_transform),
            ("history_proj.weight", &mut self.history_proj_w),
            ("history_proj.bias", &mut self.history_proj_b),
        ]
    }

    /// Register all tensors on a tape, as gradient-requiring params when
    /// `trainable`, otherwise as constants.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        let mut reg = |t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        ParamVars {
            user_encoder: AttnVars {
                query: reg(&self.user_encoder.query),
                query_bias: reg(&self.user_encoder.query_bias),
                key: reg(&self.user_encoder.key),
                key_bias: reg(&self.user_encoder.key_bias),
                value: reg(&self.user_encoder.value),
                value_bias: reg(&self.user_encoder.value_bias),
            },
            element_encoder: AttnVars {
                query: reg(&self.element_encoder.query),
                query_bias: reg(&self.element_encoder.query_bias),
                key: reg(&self.element_encoder.key),
                key_bias: reg(&self.element_encoder.key_bias),
                value: reg(&self.element_encoder.value),
                value_bias: reg(&self.element_encoder.value_bias),
            },
            user_updater: GateVars {
                message_proj: reg(&self.user_updater.message_proj),
                message_proj_bias: reg(&self.user_updater.message_proj_bias),
                memory_proj: reg(&self.user_updater.memory_proj),
                memory_proj_bias: reg(&self.user_updater.memory_proj_bias),
                message_gate: reg(&self.user_updater.message_gate),
                message_gate_bias: reg(&self.user_updater.message_gate_bias),
                memory_gate: reg(&self.user_updater.memory_gate),
                memory_gate_bias: reg(&self.user_updater.memory_gate_bias),
            },
            element_updater: GateVars {
                message_proj: reg(&self.element_updater.message_proj),
                message_proj_bias: reg(&self.element_updater.message_proj_bias),
                memory_proj: reg(&self.element_updater.memory_proj),
                memory_proj_bias: reg(&self.element_updater.memory_proj_bias),
                message_gate: reg(&self.element_updater.message_gate),
                message_gate_bias: reg(&self.element_updater.message_gate_bias),
                memory_gate: reg(&self.element_updater.memory_gate),
                memory_gate_bias: reg(&self.element_updater.memory_gate_bias),
            },
            user_embedding: reg(&self.user_embedding),
            element_embeddings: reg(&self.element_embeddings),
            score_transform: reg(&self.score_transform),
            history_proj_w: reg(&self.history_proj_w),
            history_proj_b: reg(&self.history_proj_b),
        }
    }
}

impl ParamVars {
    /// Rebuild the handle struct from vars laid out in
    /// [`ModelParameters::named_tensors`] order.
    pub fn from_ordered(vars: &[Var]) -> ParamVars {
        assert_eq!(vars.len(), 33, "expected the full parameter listing");
        let attn = |o: usize| AttnVars {
            query: vars[o],
            query_bias: vars[o + 1],
            key: vars[o + 2],
            key_bias: vars[o + 3],
            value: vars[o + 4],
            value_bias: vars[o + 5],
        };
        let gate = |o: usize| GateVars {
            message_proj: vars[o],
            message_proj_bias: vars[o + 1],
            memory_proj: vars[o + 2],
            memory_proj_bias: vars[o + 3],
            message_gate: vars[o + 4],
            message_gate_bias: vars[o + 5],
            memory_gate: vars[o + 6],
            memory_gate_bias: vars[o + 7],
        };
        ParamVars {
            user_encoder: attn(0),
            element_encoder: attn(6),
            user_updater: gate(12),
            element_updater: gate(20),
            user_embedding: vars[28],
            element_embeddings: vars[29],
            score_transform: vars[30],
            history_proj_w: vars[31],
            history_proj_b: vars[32],
        }
    }

    /// Vars in the same order as [`ModelParameters::named_tensors`].
    pub fn ordered(&self) -> Vec<Var> {
        vec![
            self.user_encoder.query,
            self.user_encoder.query_bias,
            self.user_encoder.key,
            self.user_encoder.key_bias,
            self.user_encoder.value,
            self.user_encoder.value_bias,
            self.element_encoder.query,
            self.element_encoder.query_bias,
            self.element_encoder.key,
            self.element_encoder.key_bias,
            self.element_encoder.value,
            self.element_encoder.value_bias,
            self.user_updater.message_proj,
            self.user_updater.message_proj_bias,
            self.user_updater.memory_proj,
            self.user_updater.memory_proj_bias,
            self.user_updater.message_gate,
            self.user_updater.message_gate_bias,
            self.user_updater.memory_gate,
            self.user_updater.memory_gate_bias,
            self.element_updater.message_proj,
            self.element_updater.message_proj_bias,
            self.element_updater.memory_proj,
            self.element_updater.memory_proj_bias,
            self.element_updater.message_gate,
            self.element_updater.message_gate_bias,
            self.element_updater.memory_gate,
            self.element_updater.memory_gate_bias,
            self.user_embedding,
            self.element_embeddings,
            self.score_transform,
            self.history_proj_w,
            self.history_proj_b,
        ]
    }
}

fn uniform_tensor<T: Real>(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let data: Vec<T> = (0..rows * cols)
        .map(|_| real::<T>(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("sized by construction")
}

fn uniform_vector<T: Real>(len: usize, bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::vector(
        (0..len)
            .map(|_| real::<T>(rng.gen_range(-bound..bound)))
            .collect(),
    )
}

fn normal_tensor<T: Real>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<T> {
    let data: Vec<T> = (0..rows * cols)
        .map(|_| real::<T>(StandardNormal.sample(rng)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("sized by construction")
}

/// Per-(user, time) prediction: appearance probabilities for all elements,
/// the interaction indicator, and both probability components.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector<T> {
    pub user: UserId,
    pub time: f64,
    /// Appearance probabilities, length `n`.
    pub probabilities: Vec<T>,
    /// Indicator: true where the user has interacted with the element.
    pub indicator: Vec<bool>,
    /// Continuous-time scores, defined on interacted elements.
    pub continuous: Vec<(ElementId, T)>,
    /// Personalized scores, length `n`.
    pub personalized: Vec<T>,
}

impl<T: Real> ScoreVector<T> {
    /// Elements ranked by descending probability, ties by ascending id.
    pub fn ranking(&self) -> Vec<ElementId> {
        crate::eval::rank_by_score(&self.probabilities)
    }
}
