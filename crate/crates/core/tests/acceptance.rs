//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Criterion 8 (full DC reproduction) is long-running and requires the
//! public export; it is `#[ignore]` by default and self-skips when the
//! `TEMPSET_DC_CSV` environment variable is unset.

mod common;

use std::collections::HashSet;

// Large per-batch tensor churn makes the default allocator's trim behavior
// dominate timing; the benchmark criterion assumes a steady allocator.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempset_core::data::{self, Dataset, ElementId, InteractionEvent, SplitMode};
use tempset_core::eval::{
    self, evaluate, frozen_replay, ndcg_from_ranking, phr_from_ranking, ptop_baseline,
    rank_by_score, recall_from_ranking, top_baseline, MetricReport,
};
use tempset_core::memory::{HistoryIndex, MemoryBank};
use tempset_core::model::{
    bench_epoch, process_batch, run_training, EventRef, ModelConfig, ModelParameters, ParamVars,
    TrainConfig,
};
use tempset_core::numerics::{grad_check, GradCheckConfig, Tape};
use tempset_core::setbatch::{build_batch_plan, build_execution_plan, build_execution_plan_subset, validate_plan};
use tempset_core::synthetic;

// ---------------------------------------------------------------------------
// 1. Set-batch correctness
// ---------------------------------------------------------------------------

/// Independent recomputation of the greedy rule: an event's batch is one past
/// the largest batch among all earlier conflicting events, by direct scan.
fn brute_force_batches(events: &[InteractionEvent]) -> Vec<usize> {
    let conflicts = |a: &InteractionEvent, b: &InteractionEvent| -> bool {
        if a.user == b.user {
            return true;
        }
        // Sets are sorted; two-pointer intersection test.
        let (mut i, mut j) = (0, 0);
        while i < a.set.len() && j < b.set.len() {
            match a.set[i].cmp(&b.set[j]) {
                std::cmp::Ordering::Equal => return true,
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        false
    };
    let mut batches = Vec::with_capacity(events.len());
    for (k, event) in events.iter().enumerate() {
        let mut latest: isize = -1;
        for (j, earlier) in events[..k].iter().enumerate() {
            if conflicts(event, earlier) {
                latest = latest.max(batches[j] as isize);
            }
        }
        batches.push((latest + 1) as usize);
    }
    batches
}

#[test]
fn acceptance_1_set_batch_correctness() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..1000 {
        let users = rng.gen_range(2..=50);
        let elements = rng.gen_range(4..=100);
        let events = rng.gen_range(10..=500);
        let dataset = synthetic::random_dataset(&mut rng, users, elements, events, 4);
        let plan = build_batch_plan(&dataset.events).expect("sorted by construction");
        let violations = validate_plan(&plan, &dataset.events).unwrap();
        assert!(
            violations.is_empty(),
            "trial {trial}: {} violations, first: {}",
            violations.len(),
            violations[0]
        );
        // Greedy minimality against the independent brute force.
        let expected = brute_force_batches(&dataset.events);
        let mut actual = vec![usize::MAX; dataset.events.len()];
        for (b, batch) in plan.batches.iter().enumerate() {
            for &e in batch {
                actual[e] = b;
            }
        }
        assert_eq!(actual, expected, "trial {trial}: greedy minimality violated");
    }

    // Extreme cases: pairwise-disjoint events batch as one; a single shared
    // user forces one batch per event.
    let disjoint: Vec<InteractionEvent> = (0..100)
        .map(|k| InteractionEvent {
            user: k as u32,
            set: vec![2 * k as u32, 2 * k as u32 + 1],
            timestamp: k as f64,
        })
        .collect();
    assert_eq!(build_batch_plan(&disjoint).unwrap().batch_num(), 1);
    let shared: Vec<InteractionEvent> = (0..100)
        .map(|k| InteractionEvent {
            user: 7,
            set: vec![k as u32],
            timestamp: k as f64,
        })
        .collect();
    assert_eq!(build_batch_plan(&shared).unwrap().batch_num(), 100);

    assert!(start.elapsed().as_secs() < 10, "exceeded the 10 s budget");
    println!("acceptance 1 (set-batch correctness): PASS");
}

// ---------------------------------------------------------------------------
// 2. Batched == sequential
// ---------------------------------------------------------------------------

fn run_with_plan(
    dataset: &Dataset,
    params: &ModelParameters<f64>,
    config: &ModelConfig,
    batches: &[Vec<usize>],
) -> (Vec<Vec<f64>>, MemoryBank<f64>) {
    let n = dataset.num_elements();
    let mut bank = MemoryBank::new(dataset.num_users(), n, params.dim);
    let mut history = HistoryIndex::new(dataset.num_users());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut probabilities = vec![Vec::new(); dataset.events.len()];
    for batch in batches {
        let refs: Vec<EventRef> = batch
            .iter()
            .map(|&e| EventRef {
                global_idx: e,
                event: &dataset.events[e],
            })
            .collect();
        let mut tape = Tape::new();
        let pvars = params.register(&mut tape, false);
        let out = process_batch(
            &mut tape,
            &pvars,
            params.dim,
            n,
            config,
            &refs,
            &mut bank,
            &mut history,
            false,
            &mut rng,
        )
        .expect("forward");
        for (i, &e) in out.event_order.iter().enumerate() {
            probabilities[e] = out.scores[i].probabilities.clone();
        }
    }
    (probabilities, bank)
}

#[test]
fn acceptance_2_batched_equals_sequential() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lambdas = [0.0, 0.05, 0.3, 0.5, 0.7, 1.0];
    for trial in 0..100 {
        let dim = rng.gen_range(1..=4);
        let users = rng.gen_range(2..=10);
        let elements = rng.gen_range(4..=16);
        let events = rng.gen_range(20..=60);
        let dataset = synthetic::random_dataset(&mut rng, users, elements, events, 3);
        let params = ModelParameters::<f64>::init(dim, elements, &mut rng);
        let config = ModelConfig {
            hidden_dim: dim,
            dropout: 0.0,
            lambda_user: lambdas[rng.gen_range(0..lambdas.len())],
            lambda_continuous: lambdas[rng.gen_range(0..lambdas.len())],
            include_self_in_pool: rng.gen_bool(0.8),
            ..ModelConfig::default()
        };

        // Strict per-event oracle: independent plain-loop implementation.
        let oracle = common::naive::run_naive(&dataset, &params, &config);

        let plan = build_execution_plan(&dataset.events, |_| Vec::new()).unwrap();
        assert!(validate_plan(&plan, &dataset.events).unwrap().is_empty());
        let (batched, bank_batched) = run_with_plan(&dataset, &params, &config, &plan.batches);
        let singletons: Vec<Vec<usize>> = (0..dataset.events.len()).map(|e| vec![e]).collect();
        let (sequential, bank_sequential) = run_with_plan(&dataset, &params, &config, &singletons);

        for (e, oracle_probs) in oracle.probabilities.iter().enumerate() {
            for j in 0..elements {
                let diff = (batched[e][j] - oracle_probs[j]).abs();
                assert!(
                    diff <= 1e-9,
                    "trial {trial}, event {e}, element {j}: batched {} vs oracle {} (diff {diff:e})",
                    batched[e][j],
                    oracle_probs[j]
                );
                let diff_seq = (sequential[e][j] - oracle_probs[j]).abs();
                assert!(diff_seq <= 1e-9, "trial {trial}: singleton-plan run deviates");
            }
        }
        for u in 0..users {
            let (mem, _) = bank_batched.read_user(u as u32).unwrap();
            let (mem_seq, _) = bank_sequential.read_user(u as u32).unwrap();
            for i in 0..dim {
                assert!((mem.values()[i] - oracle.state.user_memories[u][i]).abs() <= 1e-9);
                assert!((mem_seq.values()[i] - oracle.state.user_memories[u][i]).abs() <= 1e-9);
            }
        }
        for v in 0..elements {
            let (mem, _) = bank_batched.read_element(v as u32).unwrap();
            for i in 0..dim {
                assert!((mem.values()[i] - oracle.state.element_memories[v][i]).abs() <= 1e-9);
            }
        }
    }
    assert!(start.elapsed().as_secs() < 120, "exceeded the 2 min budget");
    println!("acceptance 2 (batched == sequential): PASS");
}

// ---------------------------------------------------------------------------
// 3. Gradient fidelity
// ---------------------------------------------------------------------------

#[test]
fn acceptance_3_gradient_fidelity() {
    let start = std::time::Instant::now();
    let (dim, users, elements) = (4, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = ModelParameters::<f64>::init(dim, elements, &mut rng);

    // Fixed, parameter-independent state: nonzero memories and histories so
    // every path (attention, gates, stored-memory projection, fusion) is live.
    let seed_memories: Vec<Vec<f64>> = (0..users + elements)
        .map(|i| (0..dim).map(|c| (0.3 * (i * dim + c) as f64).sin() * 0.5).collect())
        .collect();
    let events = vec![
        InteractionEvent { user: 0, set: vec![0, 1], timestamp: 1.0 },
        InteractionEvent { user: 1, set: vec![2, 3], timestamp: 1.0 },
        InteractionEvent { user: 2, set: vec![4], timestamp: 1.0 },
    ];
    let targets_per_event: Vec<Vec<ElementId>> = vec![vec![1, 5], vec![2], vec![6, 7]];

    let config = ModelConfig {
        hidden_dim: dim,
        dropout: 0.0,
        lambda_user: 0.6,
        lambda_continuous: 0.4,
        ..ModelConfig::default()
    };

    let tensors: Vec<_> = params
        .named_tensors()
        .iter()
        .map(|(_, t)| (*t).clone())
        .collect();
    let report = grad_check(
        &tensors,
        |tape, vars| {
            let pvars = ParamVars::from_ordered(vars);
            let mut bank = MemoryBank::<f64>::new(users, elements, dim);
            let mut history = HistoryIndex::new(users);
            for u in 0..users {
                bank.write_user(u as u32, &seed_memories[u], 0.0).unwrap();
            }
            for v in 0..elements {
                bank.write_element(v as u32, &seed_memories[users + v], 0.0, 0)
                    .unwrap();
            }
            // Histories include elements outside each event's set, so the
            // stored-memory projection path carries gradient.
            // Histories stay clear of the other events' sets: within one
            // batch a write is detached before a historical read sees it,
            // so such a pattern would be a true gradient-truncation
            // boundary rather than a checkable path.
            history.append(0, &[5, 0], 0.5, 0);
            history.append(1, &[6, 2], 0.5, 0);
            history.append(2, &[7, 4], 0.5, 0);

            let refs: Vec<EventRef> = events
                .iter()
                .enumerate()
                .map(|(i, event)| EventRef {
                    global_idx: i + 1,
                    event,
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = process_batch(
                tape, &pvars, dim, elements, &config, &refs, &mut bank, &mut history, false,
                &mut rng,
            )
            .map_err(|e| match e {
                tempset_core::model::ModelError::Numerics(n) => n,
                other => panic!("non-numerics failure in forward: {other}"),
            })?;
            let mut loss = None;
            for (b, target) in targets_per_event.iter().enumerate() {
                let mut targets = vec![0.0; elements];
                for &v in target {
                    targets[v as usize] = 1.0;
                }
                let event_loss = tape.bce_loss(out.y_hats[b], &targets, None)?;
                loss = Some(match loss {
                    None => event_loss,
                    Some(acc) => tape.add(acc, event_loss)?,
                });
            }
            Ok(loss.expect("at least one event"))
        },
        GradCheckConfig::default(),
    )
    .expect("gradient check ran");

    assert!(
        report.pass,
        "finite differences disagree: max normalized deviation {}",
        report.max_deviation
    );
    assert!(start.elapsed().as_secs() < 60, "exceeded the 1 min budget");
    println!(
        "acceptance 3 (gradient fidelity, max normalized deviation {:.3e}): PASS",
        report.max_deviation
    );
}

// ---------------------------------------------------------------------------
// 4. Metric oracles
// ---------------------------------------------------------------------------

/// Rank of an element computed without sorting: strictly-greater scores come
/// first, equal scores with smaller ids come first.
fn brute_rank(scores: &[f64], v: usize) -> usize {
    scores
        .iter()
        .enumerate()
        .filter(|&(w, s)| *s > scores[v] || (*s == scores[v] && w < v))
        .count()
}

#[test]
fn acceptance_4_metric_oracles() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..10_000 {
        let n = rng.gen_range(3..=40);
        let quantized = rng.gen_bool(0.3);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if quantized {
                    // Coarse grid forces ties to exercise the tie-break rule.
                    (rng.gen_range(0..4) as f64) / 4.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let truth_size = rng.gen_range(1..=n.min(8));
        let mut truth: Vec<ElementId> = Vec::new();
        while truth.len() < truth_size {
            let v = rng.gen_range(0..n) as ElementId;
            if !truth.contains(&v) {
                truth.push(v);
            }
        }
        let k = rng.gen_range(1..=45);

        let ranking = rank_by_score(&scores);

        // Brute force from first principles.
        let mut hit_ranks: Vec<usize> = truth
            .iter()
            .map(|&v| brute_rank(&scores, v as usize))
            .filter(|&r| r < k)
            .collect();
        hit_ranks.sort_unstable();
        let recall_bf = hit_ranks.len() as f64 / truth.len() as f64;
        let dcg_bf: f64 = hit_ranks.iter().map(|&r| 1.0 / ((r + 2) as f64).log2()).sum();
        let idcg_bf: f64 = (0..k.min(truth.len()))
            .map(|r| 1.0 / ((r + 2) as f64).log2())
            .sum();
        let ndcg_bf = dcg_bf / idcg_bf;
        let phr_bf = if hit_ranks.is_empty() { 0.0 } else { 1.0 };

        assert_eq!(recall_from_ranking(&ranking, &truth, k), recall_bf, "trial {trial}");
        assert_eq!(ndcg_from_ranking(&ranking, &truth, k), ndcg_bf, "trial {trial}");
        assert_eq!(phr_from_ranking(&ranking, &truth, k), phr_bf, "trial {trial}");
    }

    // Frozen hand example: truth {a, b}, a at rank 1 only (b falls outside
    // the top 10 of a 12-element ranking), K = 10.
    let mut scores = vec![0.0; 12];
    scores[0] = 1.0; // a: rank 1
    scores[1] = -1.0; // b: rank 12
    for (i, s) in scores.iter_mut().enumerate().skip(2) {
        *s = 0.9 - 0.05 * i as f64;
    }
    let got = eval::ndcg_at_k(&scores, &[0, 1], 10);
    assert!((got - 0.6131).abs() < 1e-4, "hand NDCG {got}");

    assert!(start.elapsed().as_secs() < 10, "exceeded the 10 s budget");
    println!("acceptance 4 (metric oracles): PASS");
}

// ---------------------------------------------------------------------------
// 5. Synthetic overfit
// ---------------------------------------------------------------------------

#[test]
fn acceptance_5_synthetic_overfit() {
    let start = std::time::Instant::now();
    let dataset = synthetic::periodic_dataset(20, 30, 10);
    let split = data::split(&dataset, SplitMode::Transductive, [1.0, 0.0, 0.0], 0).unwrap();
    let plan = build_execution_plan_subset(&dataset, &split.train_events).unwrap();

    let model_config = ModelConfig {
        hidden_dim: 16,
        dropout: 0.0,
        lambda_user: 0.5,
        lambda_continuous: 0.5,
        ..ModelConfig::default()
    };
    let train_config = TrainConfig {
        lr: 0.001,
        max_epochs: 500,
        patience: 500,
        seed: 0,
        ..TrainConfig::default()
    };
    let run = run_training::<f64>(&dataset, &split, &plan, &model_config, &train_config).unwrap();
    let best = run.log.iter().find(|l| l.epoch == run.best_epoch).unwrap();
    let recall10 = best.val_recall[0];
    let ndcg10 = best.val_ndcg[0];
    assert!(
        recall10 >= 0.95,
        "validation Recall@10 = {recall10:.4} after {} epochs",
        run.log.len()
    );
    assert!(ndcg10 >= 0.90, "validation NDCG@10 = {ndcg10:.4}");
    assert!(start.elapsed().as_secs() < 300, "exceeded the 5 min budget");
    println!(
        "acceptance 5 (synthetic overfit: Recall@10 {recall10:.4}, NDCG@10 {ndcg10:.4}, epoch {}): PASS",
        run.best_epoch
    );
}

// ---------------------------------------------------------------------------
// 6. Baseline ordering and collaborative cold promotion
// ---------------------------------------------------------------------------

#[test]
fn acceptance_6_baseline_ordering() {
    let start = std::time::Instant::now();
    let dataset = synthetic::collaborative_dataset(8, 4, 5, 6, 6);
    let split = data::split(&dataset, SplitMode::Transductive, [1.0, 0.0, 0.0], 0).unwrap();
    let plan = build_execution_plan_subset(&dataset, &split.train_events).unwrap();

    let model_config = ModelConfig {
        hidden_dim: 16,
        dropout: 0.0,
        lambda_user: 0.1,
        lambda_continuous: 0.1,
        ..ModelConfig::default()
    };
    let train_config = TrainConfig {
        lr: 0.001,
        max_epochs: 400,
        patience: 400,
        seed: 0,
        ..TrainConfig::default()
    };
    let run = run_training::<f64>(&dataset, &split, &plan, &model_config, &train_config).unwrap();
    let report = evaluate(
        &run.params,
        &model_config,
        &dataset,
        &split,
        SplitMode::Transductive,
        &run.bank,
        &run.history,
        &[10, 20, 30, 40],
    )
    .unwrap();

    // Baselines score the same test targets.
    let transductive = split.transductive.as_ref().unwrap();
    let top = top_baseline(&dataset, &split.train_events);
    let baseline_rows = |per_user: bool| -> MetricReport {
        let rows: Vec<_> = transductive
            .test_targets
            .iter()
            .map(|t| {
                let ranking = if per_user {
                    ptop_baseline(&dataset, &split.train_events, t.user)
                } else {
                    top.clone()
                };
                (t.user, ranking, dataset.events[t.target_event].set.clone())
            })
            .collect();
        MetricReport::from_rankings(&[10], rows)
    };
    let top_report = baseline_rows(false);
    let ptop_report = baseline_rows(true);

    let model_recall = report.recall_at(10).unwrap();
    let top_recall = top_report.recall_at(10).unwrap();
    let ptop_recall = ptop_report.recall_at(10).unwrap();
    assert!(
        model_recall >= top_recall + 0.05,
        "model {model_recall:.4} vs TOP {top_recall:.4}"
    );
    assert!(
        model_recall >= ptop_recall + 0.05,
        "model {model_recall:.4} vs PTOP {ptop_recall:.4}"
    );

    // Cold promotion: a user's top-10 must contain an element the user never
    // interacted with, surfaced through the shared structure.
    let mut bank = run.bank.clone();
    let mut history = run.history.clone();
    let capture: HashSet<usize> = transductive.test_process.iter().copied().collect();
    let captured = frozen_replay(
        &run.params,
        &model_config,
        &dataset,
        &transductive.test_process,
        &mut bank,
        &mut history,
        &capture,
    )
    .unwrap();
    let mut cold_promotions = 0usize;
    let mut cold_hits = 0usize;
    for target in &transductive.test_targets {
        let scores = &captured[&target.context_event];
        let truth: HashSet<ElementId> =
            dataset.events[target.target_event].set.iter().copied().collect();
        let top10 = &rank_by_score(&scores.probabilities)[..10];
        let never_interacted: Vec<ElementId> = top10
            .iter()
            .copied()
            .filter(|&v| !scores.indicator[v as usize])
            .collect();
        if !never_interacted.is_empty() {
            cold_promotions += 1;
        }
        if never_interacted.iter().any(|v| truth.contains(v)) {
            cold_hits += 1;
        }
    }
    assert!(
        cold_promotions > 0,
        "no user had a never-interacted element in their top-10"
    );
    assert!(
        cold_hits > 0,
        "never-interacted promotions never matched the next set"
    );

    assert!(start.elapsed().as_secs() < 600, "exceeded the 10 min budget");
    println!(
        "acceptance 6 (baselines: model {model_recall:.4} vs TOP {top_recall:.4} / PTOP \
         {ptop_recall:.4}; cold promotions {cold_promotions}/{}): PASS",
        transductive.test_targets.len()
    );
}

// ---------------------------------------------------------------------------
// 7. Set-batch speedup
// ---------------------------------------------------------------------------

#[test]
fn acceptance_7_set_batch_speedup() {
    let start = std::time::Instant::now();
    // Many users, few conflicts, short histories: a short-horizon shopping
    // log with small per-day baskets.
    let dataset = synthetic::bench_dataset(400, 4, 1);
    let config = ModelConfig {
        hidden_dim: 16,
        dropout: 0.0,
        lambda_user: 0.5,
        lambda_continuous: 0.5,
        ..ModelConfig::default()
    };
    let report = bench_epoch::<f64>(&dataset, &config, 0.001, 0, 16).unwrap();
    assert!(
        report.training_speedup >= 1.5,
        "training speedup {:.2} below the 1.5x floor (batched {:.3}s vs sequential {:.3}s)",
        report.training_speedup,
        report.training_batched_secs,
        report.training_sequential_secs
    );

    // Degenerate workload: a single user forces one event per batch, so the
    // two layouts coincide and the ratio sits near 1.
    let sequential_dataset = synthetic::bench_dataset(1, 60, 2);
    let degenerate = bench_epoch::<f64>(&sequential_dataset, &config, 0.001, 0, 16).unwrap();
    assert_eq!(degenerate.batch_num, 60);
    assert!(
        degenerate.training_speedup > 0.4 && degenerate.training_speedup < 2.5,
        "fully sequential workload should be near 1.0x, got {:.2}",
        degenerate.training_speedup
    );

    assert!(start.elapsed().as_secs() < 600, "exceeded the 10 min budget");
    println!(
        "acceptance 7 (speedup: training {:.2}x over {} batches / {} events; evaluation {:.2}x): PASS",
        report.training_speedup, report.batch_num, report.events, report.eval_speedup
    );
}

// ---------------------------------------------------------------------------
// 8. Optional full reproduction on the public DC export
// ---------------------------------------------------------------------------

#[test]
#[ignore = "multi-hour CPU run; set TEMPSET_DC_CSV to the raw export and run with --ignored"]
fn acceptance_8_dc_reproduction() {
    let Some(path) = std::env::var_os("TEMPSET_DC_CSV") else {
        println!("acceptance 8 (DC reproduction): SKIPPED - TEMPSET_DC_CSV not set");
        return;
    };
    let raw = data::ingest(std::path::Path::new(&path), data::Format::Csv).unwrap();
    let dataset = data::preprocess(&raw, data::PreprocessConfig::default()).unwrap();
    let split = data::split(&dataset, SplitMode::Transductive, [1.0, 0.0, 0.0], 0).unwrap();
    let plan = build_execution_plan_subset(&dataset, &split.train_events).unwrap();

    let model_config = ModelConfig {
        hidden_dim: 64,
        dropout: 0.2,
        lambda_user: 0.5,
        lambda_continuous: 0.0,
        ..ModelConfig::default()
    };
    let train_config = TrainConfig {
        lr: 0.001,
        max_epochs: 2000,
        patience: 100,
        seed: 0,
        ..TrainConfig::default()
    };
    let run = run_training::<f64>(&dataset, &split, &plan, &model_config, &train_config).unwrap();
    let report = evaluate(
        &run.params,
        &model_config,
        &dataset,
        &split,
        SplitMode::Transductive,
        &run.bank,
        &run.history,
        &[10, 20, 30, 40],
    )
    .unwrap();
    let recall10 = report.recall_at(10).unwrap();
    println!("DC transductive Recall@10 = {recall10:.4}");
    assert!(
        (recall10 - 0.4672).abs() <= 0.1 * 0.4672,
        "Recall@10 {recall10:.4} outside 10% of the reference 0.4672"
    );
    assert!(recall10 > 0.4080, "Recall@10 {recall10:.4} below the per-user frequency baseline");
    println!("acceptance 8 (DC reproduction: Recall@10 {recall10:.4}): PASS");
}
