//! Train/validation/test designation under the two evaluation protocols.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Per user: last set is the test target, second-last the validation
    /// target, the remaining sets are training data.
    Transductive,
    /// Users are partitioned; evaluation users are replayed from zero memory
    /// and scored on their last set.
    Inductive,
}

impl std::str::FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transductive" => Ok(SplitMode::Transductive),
            "inductive" => Ok(SplitMode::Inductive),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

/// One scored prediction: the score vector emitted while processing
/// `context_event` is compared against the set of `target_event`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTarget {
    pub user: UserId,
    pub context_event: usize,
    pub target_event: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransductivePlan {
    /// Validation predictions: emitted at each user's last training event.
    pub val_targets: Vec<EvalTarget>,
    /// Events processed (frozen parameters) during the test pass: each user's
    /// validation-target event, in universal order.
    pub test_process: Vec<usize>,
    /// Test predictions: emitted while processing `test_process` events.
    pub test_targets: Vec<EvalTarget>,
}

/// Per held-out user: context events replayed from zero memory, then the
/// last context event's scores are compared against the final set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InductiveEval {
    pub user: UserId,
    pub context_events: Vec<usize>,
    pub target_event: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InductivePlan {
    pub train_users: Vec<UserId>,
    pub val_users: Vec<UserId>,
    pub test_users: Vec<UserId>,
    pub val_evals: Vec<InductiveEval>,
    pub test_evals: Vec<InductiveEval>,
}

/// Complete split designation for a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub seed: u64,
    pub ratios: [f64; 3],
    /// Events processed during a training epoch, in universal order.
    pub train_events: Vec<usize>,
    /// Per event: whether its prediction contributes to the training loss
    /// (true only for train events whose successor set is also training data).
    pub loss_events: Vec<bool>,
    pub transductive: Option<TransductivePlan>,
    pub inductive: Option<InductivePlan>,
}

impl SplitPlan {
    /// Truth set for an evaluation target.
    pub fn target_set<'d>(&self, dataset: &'d Dataset, target: &EvalTarget) -> &'d [super::ElementId] {
        &dataset.events[target.target_event].set
    }
}

/// Build a [`SplitPlan`]. `ratios` and `seed` only matter in inductive mode.
pub fn split(
    dataset: &Dataset,
    mode: SplitMode,
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitPlan, DataError> {
    match mode {
        SplitMode::Transductive => transductive_split(dataset),
        SplitMode::Inductive => inductive_split(dataset, ratios, seed),
    }
}

fn transductive_split(dataset: &Dataset) -> Result<SplitPlan, DataError> {
    let mut train_events = Vec::new();
    let mut loss_events = vec![false; dataset.events.len()];
    let mut val_targets = Vec::new();
    let mut test_process = Vec::new();
    let mut test_targets = Vec::new();

    for (user, events) in dataset.per_user_events.iter().enumerate() {
        let len = events.len();
        if len < 3 {
            return Err(DataError::TooFewSets {
                user: dataset.user_keys[user].clone(),
                len,
            });
        }
        let user = user as UserId;
        // Last two events hold the validation and test target sets.
        let train = &events[..len - 2];
        train_events.extend_from_slice(train);
        // An event's prediction targets the user's next set; it contributes
        // loss only when that next set is still training data.
        for pair in train.windows(2) {
            loss_events[pair[0]] = true;
        }
        val_targets.push(EvalTarget {
            user,
            context_event: events[len - 3],
            target_event: events[len - 2],
        });
        test_process.push(events[len - 2]);
        test_targets.push(EvalTarget {
            user,
            context_event: events[len - 2],
            target_event: events[len - 1],
        });
    }
    train_events.sort_unstable();
    test_process.sort_unstable();

    Ok(SplitPlan {
        mode: SplitMode::Transductive,
        seed: 0,
        ratios: [1.0, 0.0, 0.0],
        train_events,
        loss_events,
        transductive: Some(TransductivePlan {
            val_targets,
            test_process,
            test_targets,
        }),
        inductive: None,
    })
}

fn inductive_split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<SplitPlan, DataError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(ratios));
    }
    let m = dataset.num_users();
    let mut order: Vec<UserId> = (0..m as UserId).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // Floor sizes for validation and test; the remainder trains.
    let n_val = (ratios[1] * m as f64).floor() as usize;
    let n_test = (ratios[2] * m as f64).floor() as usize;
    let n_train = m - n_val - n_test;
    let train_users: Vec<UserId> = order[..n_train].to_vec();
    let val_users: Vec<UserId> = order[n_train..n_train + n_val].to_vec();
    let test_users: Vec<UserId> = order[n_train + n_val..].to_vec();

    let is_train = {
        let mut mask = vec![false; m];
        for &u in &train_users {
            mask[u as usize] = true;
        }
        mask
    };

    let mut train_events = Vec::new();
    let mut loss_events = vec![false; dataset.events.len()];
    for (user, events) in dataset.per_user_events.iter().enumerate() {
        if !is_train[user] {
            continue;
        }
        train_events.extend_from_slice(events);
        // Every training event with a successor contributes to the loss.
        for pair in events.windows(2) {
            loss_events[pair[0]] = true;
        }
    }
    train_events.sort_unstable();

    let make_evals = |users: &[UserId]| -> Vec<InductiveEval> {
        let mut evals: Vec<InductiveEval> = users
            .iter()
            .filter_map(|&u| {
                let events = &dataset.per_user_events[u as usize];
                if events.len() < 2 {
                    return None;
                }
                Some(InductiveEval {
                    user: u,
                    context_events: events[..events.len() - 1].to_vec(),
                    target_event: *events.last().expect("non-empty"),
                })
            })
            .collect();
        evals.sort_by_key(|e| e.user);
        evals
    };

    Ok(SplitPlan {
        mode: SplitMode::Inductive,
        seed,
        ratios,
        train_events,
        loss_events,
        transductive: None,
        inductive: Some(InductivePlan {
            val_evals: make_evals(&val_users),
            test_evals: make_evals(&test_users),
            train_users,
            val_users,
            test_users,
        }),
    })
}
