//! Batched training with per-epoch validation and early stopping.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ElementId, SplitMode, SplitPlan};
use crate::eval::{frozen_replay, rank_by_score, replay_user_isolated, MetricReport, DEFAULT_KS};
use crate::memory::{HistoryIndex, MemoryBank};
use crate::numerics::{AdamState, LrSchedule, Tape, BCE_CLAMP};
use crate::scalar::{real, Real};
use crate::setbatch::BatchPlan;

use super::{process_batch, EventRef, ModelConfig, ModelError, ModelParameters, ScoreVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub metric_ks: Vec<usize>,
    /// Re-zero the memory bank at the start of every epoch (default), or
    /// carry values over and only restart the chronology.
    pub reset_bank_each_epoch: bool,
    /// Oversized plan batches are processed in sub-batches of this many
    /// events to bound the live tape size; the plan itself is unchanged.
    pub batch_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            max_epochs: 2000,
            patience: 100,
            seed: 0,
            metric_ks: DEFAULT_KS.to_vec(),
            reset_bank_each_epoch: true,
            batch_cap: 32,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_recall: Vec<f64>,
    pub val_ndcg: Vec<f64>,
    pub val_phr: Vec<f64>,
    pub val_average_ndcg: f64,
    pub is_best: bool,
}

/// Best-validation checkpoint and the full log.
pub struct TrainingRun<T> {
    pub params: ModelParameters<T>,
    pub optimizer: AdamState<T>,
    /// Bank and history after the frozen replay of the training events under
    /// the best parameters; evaluation continues from this state.
    pub bank: MemoryBank<T>,
    pub history: HistoryIndex,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_average_ndcg: f64,
}

/// Summed binary cross-entropy over events that carry a next-set target.
/// Probabilities are clamped like the differentiable loss.
pub fn training_loss<T: Real>(
    scores: &[ScoreVector<T>],
    targets: &[Option<Vec<ElementId>>],
) -> T {
    let lo = real::<T>(BCE_CLAMP);
    let hi = T::one() - lo;
    let mut loss = T::zero();
    for (score, target) in scores.iter().zip(targets) {
        let Some(target) = target else { continue };
        let mut truth = vec![false; score.probabilities.len()];
        for &v in target {
            truth[v as usize] = true;
        }
        for (p, y) in score.probabilities.iter().zip(&truth) {
            let pc = if *p < lo {
                lo
            } else if *p > hi {
                hi
            } else {
                *p
            };
            loss = loss
                - if *y {
                    pc.ln()
                } else {
                    (T::one() - pc).ln()
                };
        }
    }
    loss
}

/// Train until early stopping or the epoch cap, tracking the highest average
/// validation NDCG over the configured K values.
///
/// Each epoch resets the memory bank, processes the training batches in plan
/// order with per-batch backpropagation and cosine-annealed Adam steps, then
/// runs a frozen-parameter validation pass.
pub fn run_training<T: Real>(
    dataset: &Dataset,
    split: &SplitPlan,
    train_plan: &BatchPlan,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainingRun<T>, ModelError> {
    let n = dataset.num_elements();
    let m = dataset.num_users();
    let dim = model_config.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut params = ModelParameters::<T>::init(dim, n, &mut rng);
    let mut adam = AdamState::new(&params.named_tensors().iter().map(|(_, t)| *t).collect::<Vec<_>>());
    let schedule = LrSchedule::new(real::<T>(train_config.lr), train_config.max_epochs);

    // Successor event per event, within each user's sequence.
    let mut successor: Vec<Option<usize>> = vec![None; dataset.num_events()];
    for events in &dataset.per_user_events {
        for pair in events.windows(2) {
            successor[pair[0]] = Some(pair[1]);
        }
    }

    let train_plan = train_plan.with_max_batch_size(train_config.batch_cap, &dataset.events);
    let mut bank = MemoryBank::<T>::new(m, n, dim);
    let mut history = HistoryIndex::new(m);
    let mut eval_bank = MemoryBank::<T>::new(m, n, dim);
    let mut eval_history = HistoryIndex::new(m);

    let mut best: Option<TrainingRun<T>> = None;
    let mut best_ndcg = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut log: Vec<EpochLog> = Vec::new();

    for epoch in 0..train_config.max_epochs {
        let lr = schedule.lr(epoch)?;

        if train_config.reset_bank_each_epoch {
            bank.reset();
        } else {
            bank.begin_pass();
        }
        history.clear();

        let mut epoch_loss = 0.0f64;
        for (batch_idx, batch) in train_plan.batches.iter().enumerate() {
            let refs: Vec<EventRef> = batch
                .iter()
                .map(|&e| EventRef {
                    global_idx: e,
                    event: &dataset.events[e],
                })
                .collect();
            let mut tape = Tape::new();
            let pvars = params.register(&mut tape, true);
            let out = process_batch(
                &mut tape,
                &pvars,
                dim,
                n,
                model_config,
                &refs,
                &mut bank,
                &mut history,
                true,
                &mut rng,
            )?;

            // Loss targets: the user's next set. Events whose successor is
            // held out for validation or testing contribute no loss; their
            // forward pass still ran to keep memories current.
            let mut loss: Option<crate::numerics::Var> = None;
            for (b, &e) in out.event_order.iter().enumerate() {
                if !split.loss_events[e] {
                    continue;
                }
                let next = successor[e].expect("loss events have successors");
                let mut targets = vec![T::zero(); n];
                for &v in &dataset.events[next].set {
                    targets[v as usize] = T::one();
                }
                let event_loss = tape.bce_loss(out.y_hats[b], &targets, None)?;
                loss = Some(match loss {
                    None => event_loss,
                    Some(acc) => tape.add(acc, event_loss)?,
                });
            }
            let Some(loss) = loss else { continue };
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(ModelError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss_value.to_f64_lossy();

            let grads = tape.backward(loss)?;
            let ordered = pvars.ordered();
            let grad_refs: Vec<Option<&crate::numerics::Tensor<T>>> =
                ordered.iter().map(|v| grads.get(*v)).collect();
            let mut tensors = params.named_tensors_mut();
            let mut param_refs: Vec<&mut crate::numerics::Tensor<T>> =
                tensors.iter_mut().map(|(_, t)| &mut **t).collect();
            adam.step(&mut param_refs, &grad_refs, lr)?;
        }

        // Frozen-parameter validation pass.
        let report = match split.mode {
            SplitMode::Transductive => {
                let plan = split
                    .transductive
                    .as_ref()
                    .ok_or_else(|| ModelError::Protocol("missing transductive plan".into()))?;
                eval_bank.reset();
                eval_history.clear();
                let capture: HashSet<usize> =
                    plan.val_targets.iter().map(|t| t.context_event).collect();
                let captured = frozen_replay(
                    &params,
                    model_config,
                    dataset,
                    &split.train_events,
                    &mut eval_bank,
                    &mut eval_history,
                    &capture,
                )?;
                let rows: Vec<_> = plan
                    .val_targets
                    .iter()
                    .filter_map(|t| {
                        let scores = captured.get(&t.context_event)?;
                        let truth = dataset.events[t.target_event].set.clone();
                        Some((t.user, rank_by_score(&scores.probabilities), truth))
                    })
                    .collect();
                MetricReport::from_rankings(&train_config.metric_ks, rows)
            }
            SplitMode::Inductive => {
                let plan = split
                    .inductive
                    .as_ref()
                    .ok_or_else(|| ModelError::Protocol("missing inductive plan".into()))?;
                eval_bank.reset();
                eval_history.clear();
                let mut rows = Vec::new();
                for eval in &plan.val_evals {
                    let scores = replay_user_isolated(
                        &params,
                        model_config,
                        dataset,
                        &eval.context_events,
                        &mut eval_bank,
                        &mut eval_history,
                    )?;
                    let truth = dataset.events[eval.target_event].set.clone();
                    rows.push((eval.user, rank_by_score(&scores.probabilities), truth));
                }
                MetricReport::from_rankings(&train_config.metric_ks, rows)
            }
        };

        let avg_ndcg = report.average_ndcg();
        let is_best = avg_ndcg > best_ndcg;
        if is_best {
            best_ndcg = avg_ndcg;
            best_epoch = epoch;
            // Checkpoint state: parameters, optimizer, and the bank after a
            // frozen replay of the training events under these parameters.
            let (ckpt_bank, ckpt_history) = match split.mode {
                SplitMode::Transductive => (eval_bank.clone(), eval_history.clone()),
                SplitMode::Inductive => {
                    let mut b = MemoryBank::<T>::new(m, n, dim);
                    let mut h = HistoryIndex::new(m);
                    frozen_replay(
                        &params,
                        model_config,
                        dataset,
                        &split.train_events,
                        &mut b,
                        &mut h,
                        &HashSet::new(),
                    )?;
                    (b, h)
                }
            };
            best = Some(TrainingRun {
                params: params.clone(),
                optimizer: adam.clone(),
                bank: ckpt_bank,
                history: ckpt_history,
                log: Vec::new(),
                best_epoch: epoch,
                best_average_ndcg: avg_ndcg,
            });
        }
        log.push(EpochLog {
            epoch,
            lr: lr.to_f64_lossy(),
            loss: epoch_loss,
            val_recall: report.recall.clone(),
            val_ndcg: report.ndcg.clone(),
            val_phr: report.phr.clone(),
            val_average_ndcg: avg_ndcg,
            is_best,
        });

        if epoch - best_epoch >= train_config.patience {
            break;
        }
    }

    let mut run = best.ok_or_else(|| ModelError::Protocol("training ran no epochs".into()))?;
    run.log = log;
    Ok(run)
}

/// Timing comparison of one training epoch and one evaluation pass under a
/// batch plan versus one-event-per-batch sequential processing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub events: usize,
    pub batch_num: usize,
    pub training_batched_secs: f64,
    pub training_sequential_secs: f64,
    pub training_speedup: f64,
    pub eval_batched_secs: f64,
    pub eval_sequential_secs: f64,
    pub eval_speedup: f64,
}

/// Run the timing benchmark on a dataset: every event with a successor
/// contributes to the loss, so both layouts do identical numerical work per
/// event.
pub fn bench_epoch<T: Real>(
    dataset: &Dataset,
    model_config: &ModelConfig,
    lr: f64,
    seed: u64,
    batch_cap: usize,
) -> Result<BenchReport, ModelError> {
    let n = dataset.num_elements();
    let m = dataset.num_users();
    let dim = model_config.hidden_dim;

    let mut successor: Vec<Option<usize>> = vec![None; dataset.num_events()];
    for events in &dataset.per_user_events {
        for pair in events.windows(2) {
            successor[pair[0]] = Some(pair[1]);
        }
    }

    let batched = crate::setbatch::build_execution_plan(&dataset.events, |_| Vec::new())?
        .with_max_batch_size(batch_cap, &dataset.events);
    let sequential = BatchPlan::sequential(&dataset.events);

    let time_training = |plan: &BatchPlan| -> Result<f64, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParameters::<T>::init(dim, n, &mut rng);
        let mut adam =
            AdamState::new(&params.named_tensors().iter().map(|(_, t)| *t).collect::<Vec<_>>());
        let mut bank = MemoryBank::<T>::new(m, n, dim);
        let mut history = HistoryIndex::new(m);
        let start = std::time::Instant::now();
        for batch in &plan.batches {
            let refs: Vec<EventRef> = batch
                .iter()
                .map(|&e| EventRef {
                    global_idx: e,
                    event: &dataset.events[e],
                })
                .collect();
            let mut tape = Tape::new();
            let pvars = params.register(&mut tape, true);
            let out = process_batch(
                &mut tape, &pvars, dim, n, model_config, &refs, &mut bank, &mut history, true,
                &mut rng,
            )?;
            let mut loss: Option<crate::numerics::Var> = None;
            for (b, &e) in out.event_order.iter().enumerate() {
                let Some(next) = successor[e] else { continue };
                let mut targets = vec![T::zero(); n];
                for &v in &dataset.events[next].set {
                    targets[v as usize] = T::one();
                }
                let event_loss = tape.bce_loss(out.y_hats[b], &targets, None)?;
                loss = Some(match loss {
                    None => event_loss,
                    Some(acc) => tape.add(acc, event_loss)?,
                });
            }
            let Some(loss) = loss else { continue };
            let grads = tape.backward(loss)?;
            let ordered = pvars.ordered();
            let grad_refs: Vec<Option<&crate::numerics::Tensor<T>>> =
                ordered.iter().map(|v| grads.get(*v)).collect();
            let mut tensors = params.named_tensors_mut();
            let mut param_refs: Vec<&mut crate::numerics::Tensor<T>> =
                tensors.iter_mut().map(|(_, t)| &mut **t).collect();
            adam.step(&mut param_refs, &grad_refs, real(lr))?;
        }
        Ok(start.elapsed().as_secs_f64())
    };

    let training_batched_secs = time_training(&batched)?;
    let training_sequential_secs = time_training(&sequential)?;

    let mut eval_rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParameters::<T>::init(dim, n, &mut eval_rng);
    let time_eval = |plan: &BatchPlan| -> Result<f64, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = MemoryBank::<T>::new(m, n, dim);
        let mut history = HistoryIndex::new(m);
        let start = std::time::Instant::now();
        for batch in &plan.batches {
            let refs: Vec<EventRef> = batch
                .iter()
                .map(|&e| EventRef {
                    global_idx: e,
                    event: &dataset.events[e],
                })
                .collect();
            let mut tape = Tape::new();
            let pvars = params.register(&mut tape, false);
            process_batch(
                &mut tape, &pvars, dim, n, model_config, &refs, &mut bank, &mut history, false,
                &mut rng,
            )?;
        }
        Ok(start.elapsed().as_secs_f64())
    };
    let eval_batched_secs = time_eval(&batched)?;
    let eval_sequential_secs = time_eval(&sequential)?;

    Ok(BenchReport {
        events: dataset.num_events(),
        batch_num: batched.batch_num(),
        training_batched_secs,
        training_sequential_secs,
        training_speedup: training_sequential_secs / training_batched_secs,
        eval_batched_secs,
        eval_sequential_secs,
        eval_speedup: eval_sequential_secs / eval_batched_secs,
    })
}
