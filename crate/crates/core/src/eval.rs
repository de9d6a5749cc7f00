//! Top-K ranking metrics, frequency baselines, and the transductive and
//! inductive evaluation protocols.

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ElementId, SplitMode, SplitPlan, UserId};
use crate::memory::{HistoryIndex, MemoryBank};
use crate::model::{process_batch, EventRef, ModelConfig, ModelError, ModelParameters, ScoreVector};
use crate::numerics::Tape;
use crate::scalar::Real;
use crate::setbatch::build_execution_plan;

pub const DEFAULT_KS: [usize; 4] = [10, 20, 30, 40];

/// Elements ranked by descending score, ties broken by ascending element id.
pub fn rank_by_score<T: Real>(scores: &[T]) -> Vec<ElementId> {
    let mut ids: Vec<ElementId> = (0..scores.len() as ElementId).collect();
    ids.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .expect("finite scores")
            .then_with(|| a.cmp(&b))
    });
    ids
}

/// `|top-K intersect truth| / |truth|`; truth must be non-empty.
pub fn recall_at_k<T: Real>(scores: &[T], truth: &[ElementId], k: usize) -> f64 {
    recall_from_ranking(&rank_by_score(scores), truth, k)
}

pub fn recall_from_ranking(ranking: &[ElementId], truth: &[ElementId], k: usize) -> f64 {
    debug_assert!(!truth.is_empty(), "metrics are undefined on empty truth");
    let truth_set: HashSet<ElementId> = truth.iter().copied().collect();
    let hits = ranking
        .iter()
        .take(k)
        .filter(|v| truth_set.contains(v))
        .count();
    hits as f64 / truth.len() as f64
}

/// Binary-relevance NDCG:
/// `DCG = sum_{r<=K} hit_r / log2(r+1)`, ideal over `min(K, |truth|)` ranks.
pub fn ndcg_at_k<T: Real>(scores: &[T], truth: &[ElementId], k: usize) -> f64 {
    ndcg_from_ranking(&rank_by_score(scores), truth, k)
}

pub fn ndcg_from_ranking(ranking: &[ElementId], truth: &[ElementId], k: usize) -> f64 {
    debug_assert!(!truth.is_empty(), "metrics are undefined on empty truth");
    let truth_set: HashSet<ElementId> = truth.iter().copied().collect();
    let mut dcg = 0.0;
    for (i, v) in ranking.iter().take(k).enumerate() {
        if truth_set.contains(v) {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let ideal_ranks = k.min(truth.len());
    let idcg: f64 = (0..ideal_ranks).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    dcg / idcg
}

/// 1 iff the top-K contains any truth element.
pub fn phr_at_k<T: Real>(scores: &[T], truth: &[ElementId], k: usize) -> f64 {
    phr_from_ranking(&rank_by_score(scores), truth, k)
}

pub fn phr_from_ranking(ranking: &[ElementId], truth: &[ElementId], k: usize) -> f64 {
    debug_assert!(!truth.is_empty(), "metrics are undefined on empty truth");
    let truth_set: HashSet<ElementId> = truth.iter().copied().collect();
    if ranking.iter().take(k).any(|v| truth_set.contains(v)) {
        1.0
    } else {
        0.0
    }
}

/// Global frequency ranking over the training portion: occurrence count
/// descending, element id ascending.
pub fn top_baseline(dataset: &Dataset, train_events: &[usize]) -> Vec<ElementId> {
    let mut counts = vec![0u64; dataset.num_elements()];
    for &e in train_events {
        for &v in &dataset.events[e].set {
            counts[v as usize] += 1;
        }
    }
    ranking_from_counts(&counts)
}

/// Per-user frequency ranking over the user's own training events, padded
/// beyond the user's vocabulary with the global ordering.
pub fn ptop_baseline(dataset: &Dataset, train_events: &[usize], user: UserId) -> Vec<ElementId> {
    let mut counts = vec![0u64; dataset.num_elements()];
    let mut own: HashSet<ElementId> = HashSet::new();
    for &e in train_events {
        if dataset.events[e].user != user {
            continue;
        }
        for &v in &dataset.events[e].set {
            counts[v as usize] += 1;
            own.insert(v);
        }
    }
    let mut ranking: Vec<ElementId> = ranking_from_counts(&counts)
        .into_iter()
        .filter(|v| own.contains(v))
        .collect();
    for v in top_baseline(dataset, train_events) {
        if !own.contains(&v) {
            ranking.push(v);
        }
    }
    ranking
}

fn ranking_from_counts(counts: &[u64]) -> Vec<ElementId> {
    let mut ids: Vec<ElementId> = (0..counts.len() as ElementId).collect();
    ids.sort_by(|&a, &b| {
        counts[b as usize]
            .cmp(&counts[a as usize])
            .then_with(|| a.cmp(&b))
    });
    ids
}

/// Mean Recall/NDCG/PHR at each K, plus per-user raw values.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub phr: Vec<f64>,
    pub evaluated_users: usize,
    pub per_user: Vec<PerUserMetrics>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PerUserMetrics {
    pub user: UserId,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub phr: Vec<f64>,
}

impl MetricReport {
    pub fn from_rankings(
        ks: &[usize],
        rows: impl IntoIterator<Item = (UserId, Vec<ElementId>, Vec<ElementId>)>,
    ) -> MetricReport {
        let mut per_user = Vec::new();
        for (user, ranking, truth) in rows {
            // Users with an empty truth set are excluded upstream; guard anyway.
            if truth.is_empty() {
                continue;
            }
            per_user.push(PerUserMetrics {
                user,
                recall: ks.iter().map(|&k| recall_from_ranking(&ranking, &truth, k)).collect(),
                ndcg: ks.iter().map(|&k| ndcg_from_ranking(&ranking, &truth, k)).collect(),
                phr: ks.iter().map(|&k| phr_from_ranking(&ranking, &truth, k)).collect(),
            });
        }
        let evaluated = per_user.len().max(1);
        let mean = |pick: fn(&PerUserMetrics) -> &Vec<f64>| -> Vec<f64> {
            (0..ks.len())
                .map(|i| per_user.iter().map(|u| pick(u)[i]).sum::<f64>() / evaluated as f64)
                .collect()
        };
        MetricReport {
            ks: ks.to_vec(),
            recall: mean(|u| &u.recall),
            ndcg: mean(|u| &u.ndcg),
            phr: mean(|u| &u.phr),
            evaluated_users: per_user.len(),
            per_user,
        }
    }

    /// Mean NDCG over all configured K values (the early-stopping signal).
    pub fn average_ndcg(&self) -> f64 {
        if self.ndcg.is_empty() {
            0.0
        } else {
            self.ndcg.iter().sum::<f64>() / self.ndcg.len() as f64
        }
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&kk| kk == k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&kk| kk == k).map(|i| self.ndcg[i])
    }

    /// CSV rows `metric,k,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,value\n");
        for (name, values) in [("recall", &self.recall), ("ndcg", &self.ndcg), ("phr", &self.phr)] {
            for (i, v) in values.iter().enumerate() {
                out.push_str(&format!("{name},{},{v:.6}\n", self.ks[i]));
            }
        }
        out
    }
}

/// Replay `events` (global indices, universal order) with frozen parameters,
/// updating `bank` and `history` in place, and return the score vectors of
/// the captured events.
pub fn frozen_replay<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    dataset: &Dataset,
    events: &[usize],
    bank: &mut MemoryBank<T>,
    history: &mut HistoryIndex,
    capture: &HashSet<usize>,
) -> Result<HashMap<usize, ScoreVector<T>>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let subset: Vec<crate::data::InteractionEvent> =
        events.iter().map(|&e| dataset.events[e].clone()).collect();
    let plan = build_execution_plan(&subset, |u| {
        history.user(u).distinct.iter().copied().collect()
    })?
    .with_max_batch_size(32, &subset);
    let mut captured = HashMap::new();
    for batch in &plan.batches {
        let refs: Vec<EventRef> = batch
            .iter()
            .map(|&i| EventRef {
                global_idx: events[i],
                event: &dataset.events[events[i]],
            })
            .collect();
        let mut tape = Tape::new();
        let pvars = params.register(&mut tape, false);
        let out = process_batch(
            &mut tape,
            &pvars,
            params.dim,
            params.num_elements,
            config,
            &refs,
            bank,
            history,
            false,
            &mut rng,
        )?;
        for (i, &e) in out.event_order.iter().enumerate() {
            if capture.contains(&e) {
                captured.insert(e, out.scores[i].clone());
            }
        }
    }
    Ok(captured)
}

/// Replay one held-out user's context events from zero memory (frozen
/// parameters) and return the last context event's scores. The touched bank
/// and history state is zeroed again before returning.
pub fn replay_user_isolated<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    dataset: &Dataset,
    context_events: &[usize],
    bank: &mut MemoryBank<T>,
    history: &mut HistoryIndex,
) -> Result<ScoreVector<T>, ModelError> {
    debug_assert!(!context_events.is_empty());
    let capture: HashSet<usize> = context_events.last().copied().into_iter().collect();
    let result = frozen_replay(params, config, dataset, context_events, bank, history, &capture);
    // Targeted cleanup: only this user's rows and their elements were touched.
    let user = dataset.events[context_events[0]].user;
    bank.zero_user(user);
    for &e in context_events {
        for &v in &dataset.events[e].set {
            bank.zero_element(v);
        }
    }
    history.reset_user(user);
    let mut captured = result?;
    captured
        .remove(&context_events[context_events.len() - 1])
        .ok_or_else(|| ModelError::Protocol("context replay captured no scores".into()))
}

/// Evaluate a trained model under the given protocol.
///
/// Transductive: restore the post-training bank snapshot, process each
/// user's validation-target event with frozen parameters (updating
/// memories), and score the emitted predictions against the test targets.
///
/// Inductive: replay each held-out user's context sets from zero memory with
/// frozen parameters and score against their last set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    dataset: &Dataset,
    split: &SplitPlan,
    protocol: SplitMode,
    bank_snapshot: &MemoryBank<T>,
    history_snapshot: &HistoryIndex,
    ks: &[usize],
) -> Result<MetricReport, ModelError> {
    if split.mode != protocol {
        return Err(ModelError::Protocol(format!(
            "split built for {:?} but evaluation requested {:?}",
            split.mode, protocol
        )));
    }
    match protocol {
        SplitMode::Transductive => {
            let plan = split
                .transductive
                .as_ref()
                .ok_or_else(|| ModelError::Protocol("missing transductive plan".into()))?;
            let mut bank = bank_snapshot.clone();
            let mut history = history_snapshot.clone();
            let capture: HashSet<usize> = plan.test_process.iter().copied().collect();
            let captured = frozen_replay(
                params,
                config,
                dataset,
                &plan.test_process,
                &mut bank,
                &mut history,
                &capture,
            )?;
            let rows = plan.test_targets.iter().filter_map(|t| {
                let scores = captured.get(&t.context_event)?;
                let truth = dataset.events[t.target_event].set.clone();
                Some((t.user, rank_by_score(&scores.probabilities), truth))
            });
            Ok(MetricReport::from_rankings(ks, rows.collect::<Vec<_>>()))
        }
        SplitMode::Inductive => {
            let plan = split
                .inductive
                .as_ref()
                .ok_or_else(|| ModelError::Protocol("missing inductive plan".into()))?;
            let mut bank = MemoryBank::new(dataset.num_users(), dataset.num_elements(), params.dim);
            let mut history = HistoryIndex::new(dataset.num_users());
            let mut rows = Vec::new();
            for eval in &plan.test_evals {
                let scores = replay_user_isolated(
                    params,
                    config,
                    dataset,
                    &eval.context_events,
                    &mut bank,
                    &mut history,
                )?;
                let truth = dataset.events[eval.target_event].set.clone();
                rows.push((eval.user, rank_by_score(&scores.probabilities), truth));
            }
            Ok(MetricReport::from_rankings(ks, rows))
        }
    }
}
