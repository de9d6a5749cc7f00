//! Independent reference implementation: plain f64 loops, one event at a
//! time in input order, no tape, no batching, no padding. Used as the oracle
//! for strict per-event semantics.

use std::collections::BTreeSet;

use tempset_core::data::{Dataset, ElementId};
use tempset_core::model::{AttentionParams, GateParams, ModelConfig, ModelParameters};
use tempset_core::numerics::Tensor;

pub struct NaiveState {
    pub user_memories: Vec<Vec<f64>>,
    pub element_memories: Vec<Vec<f64>>,
    /// Per user: multiset of interacted elements, append order.
    pub histories: Vec<Vec<ElementId>>,
    pub distinct: Vec<BTreeSet<ElementId>>,
}

pub struct NaiveOutput {
    /// Per event (input order): probabilities over all n elements.
    pub probabilities: Vec<Vec<f64>>,
    pub state: NaiveState,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W x + b` with `W` row-major `(out, in)`.
fn affine(w: &Tensor<f64>, b: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|o| dot(w.row(o), x) + b.values()[o])
        .collect()
}

fn softmax_max_sub(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|e| e / denom).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn encode(
    enc: &AttentionParams<f64>,
    query_memory: &[f64],
    key_memories: &[&[f64]],
    scale: f64,
) -> Vec<f64> {
    let q = affine(&enc.query, &enc.query_bias, query_memory);
    let logits: Vec<f64> = key_memories
        .iter()
        .map(|k| scale * dot(&q, &affine(&enc.key, &enc.key_bias, k)))
        .collect();
    let alpha = softmax_max_sub(&logits);
    let d = query_memory.len();
    let mut c = vec![0.0; d];
    for (a, k) in alpha.iter().zip(key_memories) {
        let v = affine(&enc.value, &enc.value_bias, k);
        for (ci, vi) in c.iter_mut().zip(&v) {
            *ci += a * vi;
        }
    }
    c
}

/// Gate computed in the two-way softmax form `exp(a) / (exp(a) + exp(b))`,
/// deliberately different from the production sigmoid formulation.
fn gated_update(gate: &GateParams<f64>, message: &[f64], memory: &[f64]) -> Vec<f64> {
    let pm = affine(&gate.message_proj, &gate.message_proj_bias, message);
    let pz = affine(&gate.memory_proj, &gate.memory_proj_bias, memory);
    let ga = affine(&gate.message_gate, &gate.message_gate_bias, &pm);
    let gb = affine(&gate.memory_gate, &gate.memory_gate_bias, &pz);
    pm.iter()
        .zip(&pz)
        .zip(ga.iter().zip(&gb))
        .map(|((m, z), (a, b))| {
            let shift = a.max(*b);
            let ea = (a - shift).exp();
            let eb = (b - shift).exp();
            let g = ea / (ea + eb);
            (g * m + (1.0 - g) * z).tanh()
        })
        .collect()
}

/// Process the whole universal sequence strictly one event at a time.
pub fn run_naive(
    dataset: &Dataset,
    params: &ModelParameters<f64>,
    config: &ModelConfig,
) -> NaiveOutput {
    let n = dataset.num_elements();
    let m = dataset.num_users();
    let d = params.dim;
    let scale = 1.0 / (d as f64).sqrt();
    let emb = |v: ElementId| params.element_embeddings.row(v as usize);

    let mut state = NaiveState {
        user_memories: vec![vec![0.0; d]; m],
        element_memories: vec![vec![0.0; d]; n],
        histories: vec![Vec::new(); m],
        distinct: vec![BTreeSet::new(); m],
    };
    let mut probabilities = Vec::with_capacity(dataset.events.len());

    for event in &dataset.events {
        let u = event.user as usize;
        let set = &event.set;
        let z_u = state.user_memories[u].clone();
        let set_mems: Vec<Vec<f64>> = set
            .iter()
            .map(|&v| state.element_memories[v as usize].clone())
            .collect();

        // User message: attention over the set elements.
        let keys: Vec<&[f64]> = set_mems.iter().map(|v| v.as_slice()).collect();
        let c_u = encode(&params.user_encoder, &z_u, &keys, scale);
        let mut m_u = c_u;
        m_u.extend_from_slice(&z_u);

        // Element messages: attention over {user} + set (self included or
        // not, per configuration).
        let mut element_messages = Vec::with_capacity(set.len());
        for (j, mem_j) in set_mems.iter().enumerate() {
            let mut pool: Vec<&[f64]> = vec![z_u.as_slice()];
            for (jj, other) in set_mems.iter().enumerate() {
                if config.include_self_in_pool || jj != j {
                    pool.push(other.as_slice());
                }
            }
            let c_j = encode(&params.element_encoder, mem_j, &pool, scale);
            let mut m_j = c_j;
            m_j.extend_from_slice(mem_j);
            element_messages.push(m_j);
        }

        // Memory updates (write-back happens after both sides are computed
        // from the pre-event state).
        let new_user = gated_update(&params.user_updater, &m_u, &z_u);
        let new_elems: Vec<Vec<f64>> = element_messages
            .iter()
            .zip(&set_mems)
            .map(|(msg, prev)| gated_update(&params.element_updater, msg, prev))
            .collect();
        state.user_memories[u] = new_user.clone();
        for (&v, mem) in set.iter().zip(&new_elems) {
            state.element_memories[v as usize] = mem.clone();
        }
        for &v in set {
            state.histories[u].push(v);
            state.distinct[u].insert(v);
        }

        // Dual-perspective aggregation over the history (current set included).
        let hist = &state.histories[u];
        let beta: Vec<f64> = {
            let logits: Vec<f64> = hist
                .iter()
                .map(|&v| leaky_relu(dot(params.user_embedding.row(0), emb(v)), config.leaky_slope))
                .collect();
            softmax_max_sub(&logits)
        };
        let lambda_up = config.lambda_user;
        let mut personalized = vec![0.0; n];
        for j_prime in 0..n {
            let gamma: Vec<f64> = {
                let logits: Vec<f64> = hist
                    .iter()
                    .map(|&v| {
                        leaky_relu(dot(emb(j_prime as ElementId), emb(v)), config.leaky_slope)
                    })
                    .collect();
                softmax_max_sub(&logits)
            };
            let mut h = vec![0.0; d];
            for (i, &v) in hist.iter().enumerate() {
                let w = lambda_up * beta[i] + (1.0 - lambda_up) * gamma[i];
                for (hc, ec) in h.iter_mut().zip(emb(v)) {
                    *hc += w * ec;
                }
            }
            let transformed: Vec<f64> = (0..d)
                .map(|o| dot(params.score_transform.row(o), &h))
                .collect();
            personalized[j_prime] = dot(&transformed, emb(j_prime as ElementId));
        }

        // Continuous-time scores.
        let mut continuous = vec![0.0; n];
        for (&v, mem) in set.iter().zip(&new_elems) {
            continuous[v as usize] = dot(&new_user, mem);
        }
        for &v in &state.distinct[u] {
            if set.binary_search(&v).is_ok() {
                continue;
            }
            let projected = affine(
                &params.history_proj_w,
                &params.history_proj_b,
                &state.element_memories[v as usize],
            );
            continuous[v as usize] = dot(&new_user, &projected);
        }

        // Fusion.
        let lambda_cp = config.lambda_continuous;
        let y: Vec<f64> = (0..n)
            .map(|j| {
                let tau = if state.distinct[u].contains(&(j as ElementId)) {
                    1.0
                } else {
                    0.0
                };
                let coef = tau * lambda_cp;
                sigmoid(coef * continuous[j] + (1.0 - coef) * personalized[j])
            })
            .collect();
        probabilities.push(y);
    }

    NaiveOutput {
        probabilities,
        state,
    }
}
