//! Batched forward computation: message encoding, memory updates, history
//! aggregation, scoring and fusion.
//!
//! One call processes a whole time-consistent batch as a single small tape
//! graph. Entity disjointness inside a batch guarantees that encoder and
//! updater inputs read before any write equal the per-event state; reads of
//! *historical* element memories go through the bank's version log so results
//! match strict per-event processing exactly, whatever the batch layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ElementId, InteractionEvent, UserId};
use crate::memory::{HistoryIndex, MemoryBank};
use crate::numerics::{Shape, Tape, Tensor, Var};
use crate::scalar::{real, Real};

use super::{AttnVars, GateVars, ModelConfig, ModelError, ModelParameters, ParamVars, ScoreVector};

/// One event to process, carrying its index in the universal sequence.
#[derive(Clone, Copy, Debug)]
pub struct EventRef<'a> {
    pub global_idx: usize,
    pub event: &'a InteractionEvent,
}

/// Result of processing one batch.
pub struct BatchOutput<T> {
    /// Per event, in batch order.
    pub scores: Vec<ScoreVector<T>>,
    /// Per event: the differentiable probability vector, `Vec(n)`.
    pub y_hats: Vec<Var>,
    /// Global event indices in batch order.
    pub event_order: Vec<usize>,
    _marker: std::marker::PhantomData<T>,
}

/// Padded batch geometry plus the constants read from pre-batch memories.
struct Assembled<T> {
    batch: usize,
    set_pad: usize,
    pool: usize,
    user_mems: Tensor<T>,
    set_mems_padded: Tensor<T>,
    set_mask: Vec<bool>,
    packed_mems: Tensor<T>,
    q_block_elem: Vec<usize>,
    pool_mems: Tensor<T>,
    pool_mask: Vec<bool>,
}

fn assemble<T: Real>(
    dim: usize,
    include_self: bool,
    sets: &[&[ElementId]],
    user_mem_rows: &[Vec<T>],
    mut elem_mem_of: impl FnMut(usize, ElementId) -> Vec<T>,
) -> Result<Assembled<T>, ModelError> {
    let batch = sets.len();
    let set_pad = sets.iter().map(|s| s.len()).max().unwrap_or(0);
    let pool = set_pad + 1;
    let total: usize = sets.iter().map(|s| s.len()).sum();

    let mut user_mems = Tensor::zeros(Shape::Matrix(batch, dim));
    let mut set_mems_padded = Tensor::zeros(Shape::Matrix(batch * set_pad, dim));
    let mut set_mask = vec![false; batch * set_pad];
    let mut packed_mems = Tensor::zeros(Shape::Matrix(total, dim));
    let mut q_block_elem = Vec::with_capacity(total);
    let mut pool_mems = Tensor::zeros(Shape::Matrix(batch * pool, dim));
    let mut pool_mask = vec![false; total * pool];

    let mut packed_row = 0usize;
    for (b, set) in sets.iter().enumerate() {
        user_mems.row_mut(b).copy_from_slice(&user_mem_rows[b]);
        pool_mems
            .row_mut(b * pool)
            .copy_from_slice(&user_mem_rows[b]);
        for (j, &v) in set.iter().enumerate() {
            let mem = elem_mem_of(b, v);
            set_mems_padded
                .row_mut(b * set_pad + j)
                .copy_from_slice(&mem);
            set_mask[b * set_pad + j] = true;
            pool_mems.row_mut(b * pool + 1 + j).copy_from_slice(&mem);
            packed_mems.row_mut(packed_row).copy_from_slice(&mem);
            q_block_elem.push(b);
            // Pool columns: user first, then the set; padding stays masked.
            let mask_row = &mut pool_mask[packed_row * pool..(packed_row + 1) * pool];
            mask_row[0] = true;
            for jj in 0..set.len() {
                mask_row[1 + jj] = include_self || jj != j;
            }
            packed_row += 1;
        }
    }

    Ok(Assembled {
        batch,
        set_pad,
        pool,
        user_mems,
        set_mems_padded,
        set_mask,
        packed_mems,
        q_block_elem,
        pool_mems,
        pool_mask,
    })
}

/// Encoded messages and updated memories for a batch.
struct EncodedBatch {
    user_message: Var,
    element_messages: Var,
    user_updated: Var,
    elements_updated: Var,
}

/// Attention encoding (queries against a pooled key/value block) followed by
/// the gated memory update, for one side (user or element).
fn encode_update_graph<T: Real>(
    tape: &mut Tape<T>,
    asm: &Assembled<T>,
    encoders: (&AttnVars, &AttnVars),
    updaters: (&GateVars, &GateVars),
    dim: usize,
    dropout: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<EncodedBatch, ModelError> {
    let scale = real::<T>(1.0 / (dim as f64).sqrt());
    let identity_blocks: Vec<usize> = (0..asm.batch).collect();

    let z_user = tape.constant(asm.user_mems.clone());
    let z_set_padded = tape.constant(asm.set_mems_padded.clone());
    let z_packed = tape.constant(asm.packed_mems.clone());
    let z_pool = tape.constant(asm.pool_mems.clone());

    // User side: the user attends over the set elements.
    let (user_enc, elem_enc) = encoders;
    let q_u = affine(tape, z_user, user_enc.query, user_enc.query_bias)?;
    let k_u = affine(tape, z_set_padded, user_enc.key, user_enc.key_bias)?;
    let logits_u = tape.attn_scores(q_u, k_u, &identity_blocks, asm.set_pad, scale)?;
    let alpha_u = tape.softmax_masked(logits_u, &asm.set_mask)?;
    let v_u = affine(tape, z_set_padded, user_enc.value, user_enc.value_bias)?;
    let c_u = tape.attn_apply(alpha_u, v_u, &identity_blocks, asm.set_pad)?;
    let c_u = tape.dropout(c_u, dropout, training, rng)?;
    let user_message = tape.concat_cols(c_u, z_user)?;

    // Element side: each set element attends over the user plus the set.
    let q_v = affine(tape, z_packed, elem_enc.query, elem_enc.query_bias)?;
    let k_v = affine(tape, z_pool, elem_enc.key, elem_enc.key_bias)?;
    let logits_v = tape.attn_scores(q_v, k_v, &asm.q_block_elem, asm.pool, scale)?;
    let alpha_v = tape.softmax_masked(logits_v, &asm.pool_mask)?;
    let v_v = affine(tape, z_pool, elem_enc.value, elem_enc.value_bias)?;
    let c_v = tape.attn_apply(alpha_v, v_v, &asm.q_block_elem, asm.pool)?;
    let c_v = tape.dropout(c_v, dropout, training, rng)?;
    let element_messages = tape.concat_cols(c_v, z_packed)?;

    let (user_upd, elem_upd) = updaters;
    let user_updated = gated_update(tape, user_upd, user_message, z_user)?;
    let elements_updated = gated_update(tape, elem_upd, element_messages, z_packed)?;

    Ok(EncodedBatch {
        user_message,
        element_messages,
        user_updated,
        elements_updated,
    })
}

/// Affine projection of row-major inputs: `x W^T + b` per row.
fn affine<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var, ModelError> {
    let projected = tape.linear(x, w)?;
    Ok(tape.add_row_broadcast(projected, b)?)
}

/// `z' = tanh(g .* (W_M m) + (1 - g) .* (W_Z z))` with the per-dimension
/// two-way softmax gate `g = exp(a) / (exp(a) + exp(b)) = sigmoid(a - b)`,
/// `a = M (W_M m)`, `b = Z (W_Z z)`.
fn gated_update<T: Real>(
    tape: &mut Tape<T>,
    gate: &GateVars,
    message: Var,
    memory: Var,
) -> Result<Var, ModelError> {
    let projected_message = affine(tape, message, gate.message_proj, gate.message_proj_bias)?;
    let projected_memory = affine(tape, memory, gate.memory_proj, gate.memory_proj_bias)?;
    let gate_message = affine(tape, projected_message, gate.message_gate, gate.message_gate_bias)?;
    let gate_memory = affine(tape, projected_memory, gate.memory_gate, gate.memory_gate_bias)?;
    let diff = tape.scale_add(gate_message, T::one(), gate_memory, -T::one())?;
    let g = tape.sigmoid(diff)?;
    let one_minus_g = tape.affine(g, -T::one(), T::one())?;
    let kept_message = tape.hadamard(g, projected_message)?;
    let kept_memory = tape.hadamard(one_minus_g, projected_memory)?;
    let mixed = tape.add(kept_message, kept_memory)?;
    Ok(tape.tanh(mixed)?)
}

/// Dual-perspective aggregation and personalized scores for a group of
/// histories (one per event), computed in fused form: the histories are
/// concatenated column-wise so the whole group shares one embedding-logit
/// product, one score-transform product, and one interaction product.
///
/// With aggregation weights `w` and history embeddings `m_i`, the score of
/// candidate `j` is `(W_S sum_i w_i m_i) . e_j = sum_i w_i ((E W_S)_j . m_i)`,
/// so the aggregation matrix never has to be materialized per event. Dropout
/// on the aggregation commutes onto `E W_S` columns (a diagonal mask inside a
/// bilinear form), with one mask shared by the events of the group.
///
/// Returns one `Vec(n)` score var per history; histories must be non-empty.
pub fn personalized_block<T: Real>(
    tape: &mut Tape<T>,
    pvars: &ParamVars,
    config: &ModelConfig,
    num_elements: usize,
    histories: &[&[ElementId]],
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Var>, ModelError> {
    let slope = real::<T>(config.leaky_slope);
    let lambda_up = config.lambda_user;
    debug_assert!(histories.iter().all(|h| !h.is_empty()));

    let segments: Vec<usize> = histories.iter().map(|h| h.len()).collect();
    let hist_ids: Vec<usize> = histories
        .iter()
        .flat_map(|h| h.iter().map(|&v| v as usize))
        .collect();
    let hist_valid = vec![true; hist_ids.len()];
    let hist_embeddings = tape.gather_rows(pvars.element_embeddings, &hist_ids, &hist_valid)?;

    // Candidate-side interaction scores: S[j][i] = (E W_S)_j . m_i.
    let transformed = tape.matmul(pvars.element_embeddings, pvars.score_transform)?;
    let transformed = tape.dropout(transformed, config.dropout, training, rng)?;
    let interactions = tape.linear(transformed, hist_embeddings)?;

    // Element-perspective weights: per-candidate softmax over each history.
    let gamma = if lambda_up < 1.0 {
        let logits = tape.linear(pvars.element_embeddings, hist_embeddings)?;
        let logits = tape.leaky_relu(logits, slope)?;
        Some(tape.segmented_softmax(logits, &segments)?)
    } else {
        None
    };
    // User-perspective weights: one softmax per history, shared by candidates.
    let beta = if lambda_up > 0.0 {
        let logits = tape.linear(pvars.user_embedding, hist_embeddings)?;
        let logits = tape.leaky_relu(logits, slope)?;
        Some(tape.segmented_softmax(logits, &segments)?)
    } else {
        None
    };

    let weighted = match (beta, gamma) {
        (Some(beta), None) => tape.mul_row_broadcast(interactions, beta)?,
        (None, Some(gamma)) => tape.hadamard(gamma, interactions)?,
        (Some(beta), Some(gamma)) => {
            let user_side = tape.mul_row_broadcast(interactions, beta)?;
            let element_side = tape.hadamard(gamma, interactions)?;
            tape.scale_add(user_side, real(lambda_up), element_side, real(1.0 - lambda_up))?
        }
        (None, None) => unreachable!("lambda_user is in [0, 1]"),
    };
    let per_event = tape.segmented_row_sum(weighted, &segments)?;
    debug_assert_eq!(tape.value(per_event).cols(), num_elements);
    (0..histories.len())
        .map(|b| Ok(tape.row_of(per_event, b)?))
        .collect()
}

/// Personalized scores of a single history; see [`personalized_block`].
pub fn personalized_scores_from_history<T: Real>(
    tape: &mut Tape<T>,
    pvars: &ParamVars,
    config: &ModelConfig,
    num_elements: usize,
    history: &[ElementId],
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Var, ModelError> {
    let vars = personalized_block(tape, pvars, config, num_elements, &[history], training, rng)?;
    Ok(vars[0])
}

/// Process one time-consistent batch: read pre-event memories, encode
/// messages (keys padded to the batch's largest set, padded positions masked
/// out of every softmax), update and write back memories, append histories,
/// and compute each event's score vector. Equals strict per-event processing.
#[allow(clippy::too_many_arguments)]
pub fn process_batch<T: Real>(
    tape: &mut Tape<T>,
    pvars: &ParamVars,
    params_dim: usize,
    num_elements: usize,
    config: &ModelConfig,
    events: &[EventRef<'_>],
    bank: &mut MemoryBank<T>,
    history: &mut HistoryIndex,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<BatchOutput<T>, ModelError> {
    let batch = events.len();
    let n = num_elements;
    debug_assert!(batch > 0, "empty batch");
    for e in events {
        if e.event.set.is_empty() {
            return Err(ModelError::EmptySet {
                event: e.global_idx,
            });
        }
    }

    // Pre-batch reads; disjointness makes them pre-event reads.
    let sets: Vec<&[ElementId]> = events.iter().map(|e| e.event.set.as_slice()).collect();
    let user_mem_rows: Vec<Vec<T>> = events
        .iter()
        .map(|e| {
            bank.user_memory(e.event.user)
                .map(|(mem, _)| mem.to_vec())
        })
        .collect::<Result<_, _>>()?;
    let mut elem_rows: Vec<Vec<T>> = Vec::new();
    for e in events {
        for &v in &e.event.set {
            elem_rows.push(bank.element_memory(v)?.0.to_vec());
        }
    }
    let mut flat = elem_rows.iter();
    let asm = assemble(
        params_dim,
        config.include_self_in_pool,
        &sets,
        &user_mem_rows,
        |_, _| flat.next().expect("one row per set element").clone(),
    )?;

    let encoded = encode_update_graph(
        tape,
        &asm,
        (&pvars.user_encoder, &pvars.element_encoder),
        (&pvars.user_updater, &pvars.element_updater),
        params_dim,
        config.dropout,
        training,
        rng,
    )?;

    // Detached write-back; versions make same-batch writes visible to
    // later-indexed events' historical reads below.
    {
        let user_new = tape.value(encoded.user_updated);
        let elems_new = tape.value(encoded.elements_updated);
        let mut row = 0usize;
        for (b, e) in events.iter().enumerate() {
            bank.write_user(e.event.user, user_new.row(b), e.event.timestamp)?;
            for &v in &e.event.set {
                bank.write_element(v, elems_new.row(row), e.event.timestamp, e.global_idx)?;
                row += 1;
            }
            history.append(e.event.user, &e.event.set, e.event.timestamp, e.global_idx);
        }
    }

    // Per-event scoring tail on the shared tape: history aggregation works
    // in n-by-history blocks, which stay cache-sized.
    let lambda_cp = real::<T>(config.lambda_continuous);
    let mut packed_row_of_event: Vec<usize> = Vec::with_capacity(batch);
    {
        let mut row = 0usize;
        for e in events {
            packed_row_of_event.push(row);
            row += e.event.set.len();
        }
    }
    let histories: Vec<Vec<ElementId>> = events
        .iter()
        .map(|e| {
            history
                .user(e.event.user)
                .occurrences
                .iter()
                .map(|(v, _)| *v)
                .collect()
        })
        .collect();
    let history_slices: Vec<&[ElementId]> = histories.iter().map(|h| h.as_slice()).collect();
    let personalized_vars =
        personalized_block(tape, pvars, config, n, &history_slices, training, rng)?;

    let mut scores = Vec::with_capacity(batch);
    let mut y_hats = Vec::with_capacity(batch);
    for (b, e) in events.iter().enumerate() {
        let user_hist = history.user(e.event.user);
        let personalized = personalized_vars[b];

        // Current set: dot products of the freshly updated memories.
        let set_pairs: Vec<(usize, usize)> = (0..e.event.set.len())
            .map(|j| (b, packed_row_of_event[b] + j))
            .collect();
        let set_positions: Vec<usize> =
            e.event.set.iter().map(|&v| v as usize).collect();
        let set_scores =
            tape.paired_row_dots(encoded.user_updated, encoded.elements_updated, &set_pairs)?;

        // Previously seen elements outside the set: projected stored memory,
        // read as of this event's position in the sequence.
        let mut hist_rows: Vec<T> = Vec::new();
        let mut hist_positions: Vec<usize> = Vec::new();
        let mut hist_elem_ids: Vec<ElementId> = Vec::new();
        for &v in &user_hist.distinct {
            if e.event.set.binary_search(&v).is_ok() {
                continue;
            }
            let mem = bank.element_memory_as_of(v, e.global_idx)?;
            hist_rows.extend_from_slice(&mem);
            hist_positions.push(v as usize);
            hist_elem_ids.push(v);
        }
        let hist_scores = if hist_elem_ids.is_empty() {
            None
        } else {
            let hist_mems = tape.constant(
                Tensor::matrix(hist_elem_ids.len(), params_dim, hist_rows)
                    .expect("sized by construction"),
            );
            let projected = tape.linear(hist_mems, pvars.history_proj_w)?;
            let projected = tape.add_row_broadcast(projected, pvars.history_proj_b)?;
            let pairs: Vec<(usize, usize)> =
                (0..hist_elem_ids.len()).map(|i| (b, i)).collect();
            Some(tape.paired_row_dots(encoded.user_updated, projected, &pairs)?)
        };

        let mut continuous = tape.scatter(set_scores, n, &set_positions)?;
        if let Some(hist_scores) = hist_scores {
            let scattered = tape.scatter(hist_scores, n, &hist_positions)?;
            continuous = tape.add(continuous, scattered)?;
        }

        // Fusion: sigmoid(tau * l_cp * p_c + (1 - tau * l_cp) * p_s).
        let tau = history.indicator(e.event.user, n);
        let c_continuous: Vec<T> = tau
            .iter()
            .map(|&interacted| if interacted { lambda_cp } else { T::zero() })
            .collect();
        let c_personalized: Vec<T> = c_continuous.iter().map(|c| T::one() - *c).collect();
        let c_cont = tape.constant(Tensor::vector(c_continuous));
        let c_pers = tape.constant(Tensor::vector(c_personalized));
        let weighted_cont = tape.hadamard(c_cont, continuous)?;
        let weighted_pers = tape.hadamard(c_pers, personalized)?;
        let fused = tape.add(weighted_cont, weighted_pers)?;
        let y_hat = tape.sigmoid(fused)?;

        let mut cont: Vec<(ElementId, T)> = e
            .event
            .set
            .iter()
            .zip(tape.value(set_scores).values())
            .map(|(&v, &s)| (v, s))
            .collect();
        if let Some(hist_scores) = hist_scores {
            cont.extend(
                hist_elem_ids
                    .iter()
                    .zip(tape.value(hist_scores).values())
                    .map(|(&v, &s)| (v, s)),
            );
        }
        cont.sort_by_key(|(v, _)| *v);
        scores.push(ScoreVector {
            user: e.event.user,
            time: e.event.timestamp,
            probabilities: tape.value(y_hat).values().to_vec(),
            indicator: tau,
            continuous: cont,
            personalized: tape.value(personalized).values().to_vec(),
        });
        y_hats.push(y_hat);
    }

    Ok(BatchOutput {
        scores,
        y_hats,
        event_order: events.iter().map(|e| e.global_idx).collect(),
        _marker: std::marker::PhantomData,
    })
}

/// Score a user from the current bank and history without processing an
/// event: the freshest memories stand in for the at-event state. Cold users
/// (no history) fall back to the zero aggregation, giving probability 0.5
/// everywhere at zero scores.
pub fn score_user<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    bank: &MemoryBank<T>,
    history: &HistoryIndex,
    user: UserId,
) -> Result<ScoreVector<T>, ModelError> {
    let n = params.num_elements;
    let user_hist = history.user(user);
    let tau = history.indicator(user, n);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut tape = Tape::new();
    let pvars = params.register(&mut tape, false);

    let personalized: Vec<T> = if user_hist.occurrences.is_empty() {
        vec![T::zero(); n]
    } else {
        let hist_elems: Vec<ElementId> =
            user_hist.occurrences.iter().map(|(v, _)| *v).collect();
        let scores = personalized_scores_from_history(
            &mut tape, &pvars, config, n, &hist_elems, false, &mut rng,
        )?;
        tape.value(scores).values().to_vec()
    };

    let (z_user, last_time) = bank.read_user(user)?;
    let mut continuous: Vec<(ElementId, T)> = Vec::new();
    for &v in &user_hist.distinct {
        let (z_elem, _) = bank.read_element(v)?;
        let score = if user_hist.last_set.binary_search(&v).is_ok() {
            dot(z_user.values(), z_elem.values())
        } else {
            let projected = affine_project(params, z_elem.values());
            dot(z_user.values(), &projected)
        };
        continuous.push((v, score));
    }

    let probabilities = fuse_scores(&continuous, &personalized, &tau, config.lambda_continuous)?;
    Ok(ScoreVector {
        user,
        time: last_time,
        probabilities,
        indicator: tau,
        continuous,
        personalized,
    })
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

fn affine_project<T: Real>(params: &ModelParameters<T>, x: &[T]) -> Vec<T> {
    let d = params.dim;
    (0..d)
        .map(|o| dot(params.history_proj_w.row(o), x) + params.history_proj_b.values()[o])
        .collect()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

// ----- single-event operation surface ---------------------------------------

fn single_event_graph<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    user_memory: &[T],
    set_memories: &[Vec<T>],
) -> Result<(Tape<T>, EncodedBatch), ModelError> {
    if set_memories.is_empty() {
        return Err(ModelError::EmptySet { event: 0 });
    }
    let mut tape = Tape::new();
    let pvars = params.register(&mut tape, false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fake_set: Vec<ElementId> = (0..set_memories.len() as ElementId).collect();
    let sets = vec![fake_set.as_slice()];
    let asm = assemble(
        params.dim,
        config.include_self_in_pool,
        &sets,
        &[user_memory.to_vec()],
        |_, v| set_memories[v as usize].clone(),
    )?;
    let encoded = encode_update_graph(
        &mut tape,
        &asm,
        (&pvars.user_encoder, &pvars.element_encoder),
        (&pvars.user_updater, &pvars.element_updater),
        params.dim,
        0.0,
        false,
        &mut rng,
    )?;
    Ok((tape, encoded))
}

/// Attention-encode one user's message from the pre-event memories:
/// the attention aggregate over the set concatenated with the user memory.
pub fn encode_user_message<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    user_memory: &[T],
    set_memories: &[Vec<T>],
) -> Result<Tensor<T>, ModelError> {
    let (tape, encoded) = single_event_graph(params, config, user_memory, set_memories)?;
    Ok(Tensor::vector(tape.value(encoded.user_message).row(0).to_vec()))
}

/// Per-element messages: each element attends over the user and the set.
pub fn encode_element_messages<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    user_memory: &[T],
    set_memories: &[Vec<T>],
) -> Result<Vec<Tensor<T>>, ModelError> {
    let (tape, encoded) = single_event_graph(params, config, user_memory, set_memories)?;
    let m = tape.value(encoded.element_messages);
    Ok((0..set_memories.len())
        .map(|j| Tensor::vector(m.row(j).to_vec()))
        .collect())
}

/// Gated update of one user memory from its message.
pub fn update_user_memory<T: Real>(
    params: &ModelParameters<T>,
    message: &[T],
    previous: &[T],
) -> Result<Tensor<T>, ModelError> {
    gated_update_single(
        &params.user_updater,
        params.dim,
        message,
        previous,
    )
}

/// Gated update of element memories from their messages, independently per
/// element.
pub fn update_element_memories<T: Real>(
    params: &ModelParameters<T>,
    messages: &[Vec<T>],
    previous: &[Vec<T>],
) -> Result<Vec<Tensor<T>>, ModelError> {
    messages
        .iter()
        .zip(previous)
        .map(|(m, z)| gated_update_single(&params.element_updater, params.dim, m, z))
        .collect()
}

fn gated_update_single<T: Real>(
    gate: &super::GateParams<T>,
    dim: usize,
    message: &[T],
    previous: &[T],
) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::new();
    let gv = GateVars {
        message_proj: tape.constant(gate.message_proj.clone()),
        message_proj_bias: tape.constant(gate.message_proj_bias.clone()),
        memory_proj: tape.constant(gate.memory_proj.clone()),
        memory_proj_bias: tape.constant(gate.memory_proj_bias.clone()),
        message_gate: tape.constant(gate.message_gate.clone()),
        message_gate_bias: tape.constant(gate.message_gate_bias.clone()),
        memory_gate: tape.constant(gate.memory_gate.clone()),
        memory_gate_bias: tape.constant(gate.memory_gate_bias.clone()),
    };
    let m = tape.constant(Tensor::matrix(1, message.len(), message.to_vec())?);
    let z = tape.constant(Tensor::matrix(1, dim, previous.to_vec())?);
    let out = gated_update(&mut tape, &gv, m, z)?;
    Ok(Tensor::vector(tape.value(out).row(0).to_vec()))
}

/// Dual-perspective aggregation of one history: returns the `n x d`
/// aggregation matrix and whether the cold-user convention (all zeros)
/// applied.
pub fn personalized_aggregation<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    history: &[ElementId],
) -> Result<(Tensor<T>, bool), ModelError> {
    let n = params.num_elements;
    if history.is_empty() {
        return Ok((Tensor::zeros(Shape::Matrix(n, params.dim)), true));
    }
    let mut tape = Tape::new();
    let pvars = params.register(&mut tape, false);

    // Rebuild the aggregation (without the scoring tail) for inspection.
    let hist_pad = history.len();
    let hist_ids: Vec<usize> = history.iter().map(|&v| v as usize).collect();
    let hist_valid = vec![true; hist_pad];
    let hist_embeddings = tape.gather_rows(pvars.element_embeddings, &hist_ids, &hist_valid)?;
    let slope = real::<T>(config.leaky_slope);
    let lambda_up = config.lambda_user;
    let beta = if lambda_up > 0.0 {
        let logits = tape.attn_scores(pvars.user_embedding, hist_embeddings, &[0], hist_pad, T::one())?;
        let logits = tape.leaky_relu(logits, slope)?;
        Some(tape.softmax_masked(logits, &hist_valid)?)
    } else {
        None
    };
    let gamma = if lambda_up < 1.0 {
        let logits = tape.attn_scores(
            pvars.element_embeddings,
            hist_embeddings,
            &vec![0; n],
            hist_pad,
            T::one(),
        )?;
        let logits = tape.leaky_relu(logits, slope)?;
        let mask: Vec<bool> = vec![true; n * hist_pad];
        Some(tape.softmax_masked(logits, &mask)?)
    } else {
        None
    };
    let aggregated = match (beta, gamma) {
        (Some(beta), None) => {
            let row = tape.attn_apply(beta, hist_embeddings, &[0], hist_pad)?;
            tape.repeat_each_row(row, n)?
        }
        (None, Some(gamma)) => tape.attn_apply(gamma, hist_embeddings, &vec![0; n], hist_pad)?,
        (Some(beta), Some(gamma)) => {
            let beta_expanded = tape.repeat_each_row(beta, n)?;
            let weights =
                tape.scale_add(beta_expanded, real(lambda_up), gamma, real(1.0 - lambda_up))?;
            tape.attn_apply(weights, hist_embeddings, &vec![0; n], hist_pad)?
        }
        (None, None) => unreachable!(),
    };
    Ok((tape.value(aggregated).clone(), false))
}

/// Continuous-time scores for one user at one event: elements of the current
/// set score as the dot product of the freshly updated memories; previously
/// seen elements score against an affine projection of their stored memory
/// (the projection is what gives those scores a gradient path in training).
pub fn continuous_time_scores<T: Real>(
    params: &ModelParameters<T>,
    user_memory_updated: &[T],
    set_memories_updated: &[(ElementId, Vec<T>)],
    historical_memories: &[(ElementId, Vec<T>)],
) -> Vec<(ElementId, T)> {
    let mut scores = Vec::with_capacity(set_memories_updated.len() + historical_memories.len());
    for (v, mem) in set_memories_updated {
        scores.push((*v, dot(user_memory_updated, mem)));
    }
    for (v, mem) in historical_memories {
        let projected = affine_project(params, mem);
        scores.push((*v, dot(user_memory_updated, &projected)));
    }
    scores.sort_by_key(|(v, _)| *v);
    scores
}

/// Fuse continuous-time and personalized scores into probabilities:
/// `sigmoid(tau * l_cp * p_c + (1 - tau * l_cp) * p_s)`. Interacted elements
/// must carry a continuous-time score.
pub fn fuse_scores<T: Real>(
    continuous: &[(ElementId, T)],
    personalized: &[T],
    indicator: &[bool],
    lambda_continuous: f64,
) -> Result<Vec<T>, ModelError> {
    let lambda = real::<T>(lambda_continuous);
    let mut by_element = vec![None; personalized.len()];
    for &(v, s) in continuous {
        by_element[v as usize] = Some(s);
    }
    indicator
        .iter()
        .enumerate()
        .map(|(j, &interacted)| {
            let coef = if interacted { lambda } else { T::zero() };
            let p_c = match (interacted, by_element[j]) {
                (true, None) => {
                    return Err(ModelError::MissingContinuousScore {
                        element: j as ElementId,
                    })
                }
                (_, Some(s)) => s,
                (false, None) => T::zero(),
            };
            Ok(sigmoid(coef * p_c + (T::one() - coef) * personalized[j]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionEvent;
    use crate::model::{GateParams, ModelConfig, ModelParameters};
    use crate::numerics::{Shape, Tensor};

    const E: f64 = std::f64::consts::E;

    /// d = 1 parameters with every matrix set to [1] (message projections
    /// to [1, 1]), embeddings chosen per test.
    fn ones_params(n: usize) -> ModelParameters<f64> {
        let mut p = ModelParameters::<f64>::zeros(1, n);
        let one = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        p.user_encoder.query = one.clone();
        p.user_encoder.key = one.clone();
        p.user_encoder.value = one.clone();
        p.element_encoder.query = one.clone();
        p.element_encoder.key = one.clone();
        p.element_encoder.value = one.clone();
        for gate in [&mut p.user_updater, &mut p.element_updater] {
            gate.message_proj = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
            gate.memory_proj = one.clone();
            gate.message_gate = one.clone();
            gate.memory_gate = one.clone();
        }
        p.score_transform = one.clone();
        p.history_proj_w = one.clone();
        p
    }

    #[test]
    fn user_message_singleton_attention_is_one() {
        let params = ones_params(2);
        let config = ModelConfig::default();
        // Single element: softmax over one logit is 1, so c equals W_V z_v.
        let m = encode_user_message(&params, &config, &[1.0], &[vec![0.25]]).unwrap();
        assert_eq!(m.values(), &[0.25, 1.0]);
    }

    #[test]
    fn user_message_zero_memories_give_zero_message() {
        let params = ones_params(2);
        let config = ModelConfig::default();
        let m = encode_user_message(&params, &config, &[0.0], &[vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(m.values(), &[0.0, 0.0]);
    }

    #[test]
    fn user_message_hand_trace() {
        // d=1, all weights [1], z_u=[1], element memories [1] and [0]:
        // logits [1, 0] -> alpha [e/(e+1), 1/(e+1)], c = e/(e+1).
        let params = ones_params(2);
        let config = ModelConfig::default();
        let m = encode_user_message(&params, &config, &[1.0], &[vec![1.0], vec![0.0]]).unwrap();
        let alpha0 = E / (E + 1.0);
        assert!((m.values()[0] - alpha0).abs() < 1e-15, "{m:?}");
        assert_eq!(m.values()[1], 1.0);
    }

    #[test]
    fn user_message_rejects_empty_set() {
        let params = ones_params(2);
        let config = ModelConfig::default();
        assert!(matches!(
            encode_user_message(&params, &config, &[1.0], &[]),
            Err(ModelError::EmptySet { .. })
        ));
    }

    #[test]
    fn element_message_singleton_hand_trace() {
        // Pool = {user (z=0), self (z=1)}: logits [0, 1],
        // alpha = [1/(e+1), e/(e+1)], c = e/(e+1), message [c, 1].
        let params = ones_params(2);
        let config = ModelConfig::default();
        let ms = encode_element_messages(&params, &config, &[0.0], &[vec![1.0]]).unwrap();
        assert_eq!(ms.len(), 1);
        let c = E / (E + 1.0);
        assert!((ms[0].values()[0] - c).abs() < 1e-15);
        assert_eq!(ms[0].values()[1], 1.0);
    }

    #[test]
    fn element_messages_zero_memories_are_zero() {
        let params = ones_params(3);
        let config = ModelConfig::default();
        let ms =
            encode_element_messages(&params, &config, &[0.0], &[vec![0.0], vec![0.0]]).unwrap();
        for m in ms {
            assert_eq!(m.values(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn element_messages_are_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = ModelParameters::<f64>::init(3, 4, &mut rng);
        let config = ModelConfig::default();
        let mems = vec![
            vec![0.3, -0.2, 0.7],
            vec![-0.5, 0.1, 0.2],
            vec![0.9, 0.4, -0.1],
        ];
        let forward = encode_element_messages(&params, &config, &[0.1, 0.2, 0.3], &mems).unwrap();
        let mut reversed_mems = mems.clone();
        reversed_mems.reverse();
        let backward =
            encode_element_messages(&params, &config, &[0.1, 0.2, 0.3], &reversed_mems).unwrap();
        for (j, m) in forward.iter().enumerate() {
            let r = &backward[mems.len() - 1 - j];
            assert!(m.max_abs_diff(r) < 1e-14, "element message changed with order");
        }
    }

    #[test]
    fn updater_zero_parameters_give_zero_memory() {
        let params = ModelParameters::<f64>::zeros(1, 2);
        let z = update_user_memory(&params, &[1.0, 0.0], &[0.5]).unwrap();
        assert_eq!(z.values(), &[0.0]);
    }

    #[test]
    fn updater_hand_trace() {
        // W_M=[1,1], W_Z=[1], M=Z=[1], m=[1,0], z=[0]:
        // gate logits (1, 0) -> g = e/(e+1); z' = tanh(g).
        let params = ones_params(2);
        let z = update_user_memory(&params, &[1.0, 0.0], &[0.0]).unwrap();
        let g = E / (E + 1.0);
        assert!((z.values()[0] - g.tanh()).abs() < 1e-15);
        // Oracle value, frozen: tanh(0.7310585786300049).
        assert!((z.values()[0] - 0.623_712_549_825_875_7).abs() < 1e-15);
    }

    #[test]
    fn updater_outputs_stay_in_tanh_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = ModelParameters::<f64>::init(4, 3, &mut rng);
        for trial in 0..20 {
            let m: Vec<f64> = (0..8).map(|i| ((trial * 8 + i) as f64 * 0.7).sin() * 3.0).collect();
            let z: Vec<f64> = (0..4).map(|i| ((trial * 4 + i) as f64 * 0.3).cos() * 3.0).collect();
            let out = update_user_memory(&params, &m, &z).unwrap();
            for v in out.values() {
                assert!(*v > -1.0 && *v < 1.0);
            }
            let out = update_element_memories(&params, &[m.clone()], &[z.clone()]).unwrap();
            for v in out[0].values() {
                assert!(*v > -1.0 && *v < 1.0);
            }
        }
    }

    #[test]
    fn aggregation_duplicate_history_collapses_to_that_embedding() {
        let mut params = ones_params(2);
        params.user_embedding = Tensor::matrix(1, 1, vec![0.4]).unwrap();
        params.element_embeddings = Tensor::matrix(2, 1, vec![0.9, -0.3]).unwrap();
        for lambda in [0.0, 0.3, 1.0] {
            let config = ModelConfig {
                hidden_dim: 1,
                lambda_user: lambda,
                ..ModelConfig::default()
            };
            let (h, cold) = personalized_aggregation(&params, &config, &[0, 0]).unwrap();
            assert!(!cold);
            for row in 0..2 {
                assert!((h.get(row, 0) - 0.9).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn aggregation_user_only_makes_rows_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParameters::<f64>::init(3, 5, &mut rng);
        let config = ModelConfig {
            hidden_dim: 3,
            lambda_user: 1.0,
            ..ModelConfig::default()
        };
        let (h, _) = personalized_aggregation(&params, &config, &[1, 4, 2]).unwrap();
        for row in 1..5 {
            for c in 0..3 {
                assert_eq!(h.get(0, c), h.get(row, c));
            }
        }
    }

    #[test]
    fn aggregation_hand_trace() {
        // e_u=[1], history embeddings [1] and [-1], lambda_up=1, slope 0.01:
        // beta = softmax([1, -0.01]), h = beta0 - beta1.
        let mut params = ones_params(2);
        params.user_embedding = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        params.element_embeddings = Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap();
        let config = ModelConfig {
            hidden_dim: 1,
            lambda_user: 1.0,
            ..ModelConfig::default()
        };
        let (h, _) = personalized_aggregation(&params, &config, &[0, 1]).unwrap();
        let b0 = E / (E + (-0.01f64).exp());
        let b1 = (-0.01f64).exp() / (E + (-0.01f64).exp());
        let expected = b0 - b1;
        assert!((h.get(0, 0) - expected).abs() < 1e-15);
        // Oracle values, frozen.
        assert!((b0 - 0.733_020_149_238_857_6).abs() < 1e-15);
        assert!((expected - 0.466_040_298_477_715_1).abs() < 1e-15);
    }

    #[test]
    fn aggregation_empty_history_is_flagged_zero() {
        let params = ones_params(3);
        let config = ModelConfig::default();
        let (h, cold) = personalized_aggregation(&params, &config, &[]).unwrap();
        assert!(cold);
        assert!(h.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn continuous_scores_zero_user_memory_is_zero() {
        let params = ones_params(2);
        let scores = continuous_time_scores(
            &params,
            &[0.0],
            &[(0, vec![0.7])],
            &[(1, vec![-0.3])],
        );
        assert!(scores.iter().all(|(_, s)| *s == 0.0));
    }

    #[test]
    fn continuous_scores_set_and_historical_hand_traces() {
        // Set element: plain dot product, 2 * 0.5 = 1.
        // Historical element: FCN w=[1], b=[0.5]: 2 * (1 + 0.5) = 3.
        let mut params = ones_params(2);
        params.history_proj_b = Tensor::vector(vec![0.5]);
        let scores = continuous_time_scores(
            &params,
            &[2.0],
            &[(0, vec![0.5])],
            &[(1, vec![1.0])],
        );
        assert_eq!(scores, vec![(0, 1.0), (1, 3.0)]);
    }

    #[test]
    fn fuse_follows_indicator_and_lambda() {
        // tau=0: sigmoid(p_s); tau=1, lambda=1: sigmoid(p_c).
        let fused = fuse_scores::<f64>(&[(0, 2.0)], &[0.5, -0.25], &[true, false], 1.0).unwrap();
        assert!((fused[0] - sigmoid(2.0)).abs() < 1e-15);
        assert!((fused[1] - sigmoid(-0.25)).abs() < 1e-15);

        // tau=1, lambda=0.7, p_c=1, p_s=0 -> sigmoid(0.7).
        let fused = fuse_scores::<f64>(&[(0, 1.0)], &[0.0], &[true], 0.7).unwrap();
        assert!((fused[0] - 0.668_187_772_168_166_2).abs() < 1e-15);
    }

    #[test]
    fn fuse_requires_continuous_scores_for_interacted_elements() {
        let err = fuse_scores::<f64>(&[], &[0.0], &[true], 0.5).unwrap_err();
        assert!(matches!(err, ModelError::MissingContinuousScore { element: 0 }));
    }

    fn event(user: u32, set: &[u32], t: f64) -> InteractionEvent {
        InteractionEvent {
            user,
            set: set.to_vec(),
            timestamp: t,
        }
    }

    /// Run events through process_batch under the given plan layout.
    fn run_plan(
        params: &ModelParameters<f64>,
        config: &ModelConfig,
        events: &[InteractionEvent],
        batches: &[Vec<usize>],
        m: usize,
        n: usize,
    ) -> (Vec<ScoreVector<f64>>, MemoryBank<f64>) {
        let mut bank = MemoryBank::new(m, n, params.dim);
        let mut history = HistoryIndex::new(m);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut scores: Vec<Option<ScoreVector<f64>>> = vec![None; events.len()];
        for batch in batches {
            let refs: Vec<EventRef> = batch
                .iter()
                .map(|&i| EventRef {
                    global_idx: i,
                    event: &events[i],
                })
                .collect();
            let mut tape = Tape::new();
            let pvars = params.register(&mut tape, false);
            let out = process_batch(
                &mut tape, &pvars, params.dim, n, config, &refs, &mut bank, &mut history,
                false, &mut rng,
            )
            .unwrap();
            for (i, &e) in out.event_order.iter().enumerate() {
                scores[e] = Some(out.scores[i].clone());
            }
        }
        (scores.into_iter().map(|s| s.unwrap()).collect(), bank)
    }

    #[test]
    fn zero_parameters_predict_one_half_everywhere() {
        let n = 4;
        let params = ModelParameters::<f64>::zeros(2, n);
        let config = ModelConfig {
            hidden_dim: 2,
            ..ModelConfig::default()
        };
        let events = vec![event(0, &[0, 2], 1.0), event(1, &[1], 2.0)];
        let (scores, bank) = run_plan(&params, &config, &events, &[vec![0, 1]], 2, n);
        for s in &scores {
            for p in &s.probabilities {
                assert_eq!(*p, 0.5);
            }
        }
        assert!(bank.user_values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_of_disjoint_events_equals_isolated_processing() {
        // Events share no entities, so batching them must not change any
        // output despite key padding (sets have different sizes).
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 6;
        let params = ModelParameters::<f64>::init(3, n, &mut rng);
        let config = ModelConfig {
            hidden_dim: 3,
            lambda_user: 0.4,
            lambda_continuous: 0.6,
            ..ModelConfig::default()
        };
        let events = vec![event(0, &[0], 1.0), event(1, &[1, 2, 3], 1.0)];
        let (batched, bank_batched) = run_plan(&params, &config, &events, &[vec![0, 1]], 2, n);
        let (solo, bank_solo) = run_plan(&params, &config, &events, &[vec![0], vec![1]], 2, n);
        for (a, b) in batched.iter().zip(&solo) {
            for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
                assert!((x - y).abs() < 1e-15, "{x} vs {y}");
            }
        }
        assert!(bank_batched
            .user_values()
            .iter()
            .zip(bank_solo.user_values())
            .all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(bank_batched
            .element_values()
            .iter()
            .zip(bank_solo.element_values())
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn collaborative_signal_propagates_through_shared_elements() {
        // e1=(u0,{v0,v1}), e2=(u2,{v1,v2}): u2's memory after e2 reflects
        // e1 through the shared element v1. Changing e1's set changes it.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 4;
        let params = ModelParameters::<f64>::init(3, n, &mut rng);
        let config = ModelConfig {
            hidden_dim: 3,
            ..ModelConfig::default()
        };
        let base = vec![event(0, &[0, 1], 1.0), event(2, &[1, 2], 2.0)];
        let changed = vec![event(0, &[0], 1.0), event(2, &[1, 2], 2.0)];
        let (_, bank_a) = run_plan(&params, &config, &base, &[vec![0], vec![1]], 3, n);
        let (_, bank_b) = run_plan(&params, &config, &changed, &[vec![0], vec![1]], 3, n);
        let (mem_a, _) = bank_a.read_user(2).unwrap();
        let (mem_b, _) = bank_b.read_user(2).unwrap();
        assert!(
            mem_a.max_abs_diff(&mem_b) > 1e-9,
            "shared-element perturbation did not reach the later user"
        );
    }

    #[test]
    fn score_user_cold_start_is_uniform_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParameters::<f64>::init(2, 5, &mut rng);
        let config = ModelConfig {
            hidden_dim: 2,
            ..ModelConfig::default()
        };
        let bank = MemoryBank::new(3, 5, 2);
        let history = HistoryIndex::new(3);
        let s = score_user(&params, &config, &bank, &history, 1).unwrap();
        assert!(s.probabilities.iter().all(|p| *p == 0.5));
        assert!(s.indicator.iter().all(|t| !*t));
        assert_eq!(s.ranking(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn personalized_scores_match_aggregation_tail() {
        // p_s continues the aggregation trace: W_S=[1], e = [1, -1]:
        // p_s = [h, -h] with h = 0.4660402984777151.
        let mut params = ones_params(2);
        params.user_embedding = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        params.element_embeddings = Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap();
        let config = ModelConfig {
            hidden_dim: 1,
            lambda_user: 1.0,
            ..ModelConfig::default()
        };
        let mut tape = Tape::new();
        let pvars = params.register(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scores = personalized_scores_from_history(
            &mut tape, &pvars, &config, 2, &[0, 1], false, &mut rng,
        )
        .unwrap();
        let values = tape.value(scores).values();
        let h = 0.466_040_298_477_715_1;
        assert!((values[0] - h).abs() < 1e-15);
        assert!((values[1] + h).abs() < 1e-15);

        // W_S = 0 zeroes every personalized score.
        params.score_transform = Tensor::zeros(Shape::Matrix(1, 1));
        let mut tape = Tape::new();
        let pvars = params.register(&mut tape, false);
        let scores = personalized_scores_from_history(
            &mut tape, &pvars, &config, 2, &[0, 1], false, &mut rng,
        )
        .unwrap();
        assert!(tape.value(scores).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn updater_gate_is_zero_params_fixed_point() {
        // All-zero gate parameters: g = sigmoid(0) = 0.5 per dimension and
        // both projections vanish, so the update is tanh(0) = 0.
        let gate = GateParams::<f64> {
            message_proj: Tensor::zeros(Shape::Matrix(2, 4)),
            message_proj_bias: Tensor::zeros(Shape::Vector(2)),
            memory_proj: Tensor::zeros(Shape::Matrix(2, 2)),
            memory_proj_bias: Tensor::zeros(Shape::Vector(2)),
            message_gate: Tensor::zeros(Shape::Matrix(2, 2)),
            message_gate_bias: Tensor::zeros(Shape::Vector(2)),
            memory_gate: Tensor::zeros(Shape::Matrix(2, 2)),
            memory_gate_bias: Tensor::zeros(Shape::Vector(2)),
        };
        let out = gated_update_single(&gate, 2, &[1.0, -2.0, 0.5, 0.25], &[0.9, -0.9]).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0]);
    }
}
