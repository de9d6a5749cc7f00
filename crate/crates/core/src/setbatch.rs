//! Time-consistent batch planning over the universal event sequence.
//!
//! A plan groups interactions into batches so that no batch contains two
//! events sharing a user or an element, and any two conflicting events appear
//! in batches ordered by time. Each event is assigned greedily to the
//! earliest feasible batch: one past the largest batch index previously
//! recorded for its user or any of its elements. Planning is linear in the
//! total event-set size.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InteractionEvent};

#[derive(Debug, thiserror::Error)]
pub enum BatchPlanError {
    #[error("events not sorted by timestamp: event {index} at t={t} precedes t={prev}")]
    UnsortedEvents { index: usize, t: f64, prev: f64 },
    #[error("plan references event index {index}, but only {len} events exist")]
    EventIndexOutOfRange { index: usize, len: usize },
}

/// One constraint violation found by [`validate_plan`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// Two events in one batch share a user.
    DuplicateUser {
        batch: usize,
        user: u32,
        events: (usize, usize),
    },
    /// Two events in one batch share an element.
    DuplicateElement {
        batch: usize,
        element: u32,
        events: (usize, usize),
    },
    /// Conflicting events are not in increasing batch order.
    OrderInversion {
        earlier_event: usize,
        later_event: usize,
        earlier_batch: usize,
        later_batch: usize,
    },
    /// An event appears in no batch or in more than one.
    Coverage { event: usize, occurrences: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DuplicateUser { batch, user, events } => write!(
                f,
                "batch {batch}: user {user} appears in events {} and {}",
                events.0, events.1
            ),
            Violation::DuplicateElement { batch, element, events } => write!(
                f,
                "batch {batch}: element {element} appears in events {} and {}",
                events.0, events.1
            ),
            Violation::OrderInversion {
                earlier_event,
                later_event,
                earlier_batch,
                later_batch,
            } => write!(
                f,
                "event {earlier_event} (batch {earlier_batch}) conflicts with later event \
                 {later_event} (batch {later_batch}) but batches are not increasing"
            ),
            Violation::Coverage { event, occurrences } => {
                write!(f, "event {event} appears in {occurrences} batches")
            }
        }
    }
}

/// Ordered batches of event indices into a dataset's universal sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    /// `batches[b]` lists event indices, preserving input order within a batch.
    pub batches: Vec<Vec<usize>>,
    /// Largest set size per batch, for padding buffers.
    pub max_set_sizes: Vec<usize>,
}

impl BatchPlan {
    pub fn batch_num(&self) -> usize {
        self.batches.len()
    }

    pub fn event_count(&self) -> usize {
        self.batches.iter().map(|b| b.len()).sum()
    }

    pub fn mean_batch_size(&self) -> f64 {
        if self.batches.is_empty() {
            0.0
        } else {
            self.event_count() as f64 / self.batches.len() as f64
        }
    }

    /// A maximally sequential plan: one event per batch, in input order.
    pub fn sequential(events: &[InteractionEvent]) -> BatchPlan {
        BatchPlan {
            batches: (0..events.len()).map(|i| vec![i]).collect(),
            max_set_sizes: events.iter().map(|e| e.set.len()).collect(),
        }
    }

    /// Split batches larger than `cap` into consecutive sub-batches. Any
    /// subset of a valid batch is itself valid, so this only bounds the
    /// working set of one processing step.
    pub fn with_max_batch_size(&self, cap: usize, events: &[InteractionEvent]) -> BatchPlan {
        debug_assert!(cap > 0);
        let mut batches = Vec::with_capacity(self.batches.len());
        let mut max_set_sizes = Vec::with_capacity(self.batches.len());
        for batch in &self.batches {
            for chunk in batch.chunks(cap.max(1)) {
                batches.push(chunk.to_vec());
                max_set_sizes.push(
                    chunk
                        .iter()
                        .map(|&e| events[e].set.len())
                        .max()
                        .unwrap_or(0),
                );
            }
        }
        BatchPlan {
            batches,
            max_set_sizes,
        }
    }

    /// Restrict a plan to a subset of global event indices, keeping order and
    /// dropping emptied batches.
    pub fn sequential_subset(dataset: &Dataset, subset: &[usize]) -> BatchPlan {
        BatchPlan {
            batches: subset.iter().map(|&i| vec![i]).collect(),
            max_set_sizes: subset
                .iter()
                .map(|&i| dataset.events[i].set.len())
                .collect(),
        }
    }
}

/// Greedy earliest-feasible assignment over a timestamp-sorted sequence.
///
/// Each event's batch index is one past the maximum over the last batch
/// indices of its user and elements, with unseen entities defaulting below
/// the first batch. Ties in timestamp keep input order, so the earlier-listed
/// of two conflicting simultaneous events gets the smaller batch.
pub fn build_batch_plan(events: &[InteractionEvent]) -> Result<BatchPlan, BatchPlanError> {
    for i in 1..events.len() {
        if events[i].timestamp < events[i - 1].timestamp {
            return Err(BatchPlanError::UnsortedEvents {
                index: i,
                t: events[i].timestamp,
                prev: events[i - 1].timestamp,
            });
        }
    }

    let mut user_last: Vec<isize> = Vec::new();
    let mut element_last: Vec<isize> = Vec::new();
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut max_set_sizes: Vec<usize> = Vec::new();

    for (k, event) in events.iter().enumerate() {
        let u = event.user as usize;
        if u >= user_last.len() {
            user_last.resize(u + 1, -1);
        }
        let mut last = user_last[u];
        for &v in &event.set {
            let v = v as usize;
            if v >= element_last.len() {
                element_last.resize(v + 1, -1);
            }
            last = last.max(element_last[v]);
        }
        let insert = (last + 1) as usize;
        if insert >= batches.len() {
            batches.push(Vec::new());
            max_set_sizes.push(0);
        }
        batches[insert].push(k);
        max_set_sizes[insert] = max_set_sizes[insert].max(event.set.len());
        user_last[u] = insert as isize;
        for &v in &event.set {
            element_last[v as usize] = insert as isize;
        }
    }

    Ok(BatchPlan {
        batches,
        max_set_sizes,
    })
}

/// Build a plan for a subset of the universal sequence, preserving order.
/// Returned indices refer to the original event list.
pub fn build_batch_plan_subset(
    dataset: &Dataset,
    subset: &[usize],
) -> Result<BatchPlan, BatchPlanError> {
    let events: Vec<InteractionEvent> = subset
        .iter()
        .map(|&i| dataset.events[i].clone())
        .collect();
    let mut plan = build_batch_plan(&events)?;
    for batch in &mut plan.batches {
        for slot in batch.iter_mut() {
            *slot = subset[*slot];
        }
    }
    Ok(plan)
}

/// Greedy plan augmented with read-after-write dependencies, so batched
/// execution can score every event against the memory state of its exact
/// position in the sequence.
///
/// The base rule orders events that share a user or an element. Scoring an
/// event additionally *reads* the stored memories of the user's previously
/// interacted elements outside the current set; the writer of such a memory
/// only conflicts with the reader transitively, so the base rule may schedule
/// the reader's batch before the writer's. Here each event also waits
/// (non-strictly) for the last earlier event containing any element of its
/// historical read set. Workloads whose histories only revisit the user's own
/// ordered elements reduce to the base plan.
///
/// `prior_interactions` supplies, per user, elements interacted before this
/// subsequence (their memories are already final in the bank).
pub fn build_execution_plan(
    events: &[InteractionEvent],
    prior_interactions: impl Fn(u32) -> Vec<u32>,
) -> Result<BatchPlan, BatchPlanError> {
    use std::collections::{HashMap, HashSet};

    for i in 1..events.len() {
        if events[i].timestamp < events[i - 1].timestamp {
            return Err(BatchPlanError::UnsortedEvents {
                index: i,
                t: events[i].timestamp,
                prev: events[i - 1].timestamp,
            });
        }
    }

    let mut user_last: HashMap<u32, isize> = HashMap::new();
    let mut element_last: HashMap<u32, isize> = HashMap::new();
    let mut distinct: HashMap<u32, HashSet<u32>> = HashMap::new();
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut max_set_sizes: Vec<usize> = Vec::new();

    for (k, event) in events.iter().enumerate() {
        let seen = distinct
            .entry(event.user)
            .or_insert_with(|| prior_interactions(event.user).into_iter().collect());
        // Strict conflicts: the user and the event's own elements.
        let mut insert = user_last.get(&event.user).copied().unwrap_or(-1) + 1;
        for &v in &event.set {
            insert = insert.max(element_last.get(&v).copied().unwrap_or(-1) + 1);
        }
        // Read-after-write: previously seen elements outside the set may be
        // scored from their stored memory, which must already be written.
        for &v in seen.iter() {
            if event.set.binary_search(&v).is_err() {
                insert = insert.max(element_last.get(&v).copied().unwrap_or(-1));
            }
        }
        let insert = insert.max(0) as usize;
        if insert >= batches.len() {
            batches.resize_with(insert + 1, Vec::new);
            max_set_sizes.resize(insert + 1, 0);
        }
        batches[insert].push(k);
        max_set_sizes[insert] = max_set_sizes[insert].max(event.set.len());
        user_last.insert(event.user, insert as isize);
        for &v in &event.set {
            element_last.insert(v, insert as isize);
            seen.insert(v);
        }
    }

    Ok(BatchPlan {
        batches,
        max_set_sizes,
    })
}

/// [`build_execution_plan`] over a subset of a dataset's events, with empty
/// prior state; returned indices refer to the full event list.
pub fn build_execution_plan_subset(
    dataset: &Dataset,
    subset: &[usize],
) -> Result<BatchPlan, BatchPlanError> {
    let events: Vec<InteractionEvent> = subset
        .iter()
        .map(|&i| dataset.events[i].clone())
        .collect();
    let mut plan = build_execution_plan(&events, |_| Vec::new())?;
    for batch in &mut plan.batches {
        for slot in batch.iter_mut() {
            *slot = subset[*slot];
        }
    }
    Ok(plan)
}

/// Check every plan constraint and return all violations found:
/// exact coverage of events, intra-batch entity uniqueness, and increasing
/// batch order for conflicting events. An empty list means the plan is valid.
pub fn validate_plan(
    plan: &BatchPlan,
    events: &[InteractionEvent],
) -> Result<Vec<Violation>, BatchPlanError> {
    use std::collections::HashMap;

    let mut violations = Vec::new();

    let mut occurrences = vec![0usize; events.len()];
    for batch in &plan.batches {
        for &e in batch {
            if e >= events.len() {
                return Err(BatchPlanError::EventIndexOutOfRange {
                    index: e,
                    len: events.len(),
                });
            }
            occurrences[e] += 1;
        }
    }
    for (e, &n) in occurrences.iter().enumerate() {
        if n != 1 {
            violations.push(Violation::Coverage {
                event: e,
                occurrences: n,
            });
        }
    }

    for (b, batch) in plan.batches.iter().enumerate() {
        let mut seen_users: HashMap<u32, usize> = HashMap::new();
        let mut seen_elements: HashMap<u32, usize> = HashMap::new();
        for &e in batch {
            let event = &events[e];
            if let Some(&prev) = seen_users.get(&event.user) {
                violations.push(Violation::DuplicateUser {
                    batch: b,
                    user: event.user,
                    events: (prev, e),
                });
            } else {
                seen_users.insert(event.user, e);
            }
            for &v in &event.set {
                if let Some(&prev) = seen_elements.get(&v) {
                    violations.push(Violation::DuplicateElement {
                        batch: b,
                        element: v,
                        events: (prev, e),
                    });
                } else {
                    seen_elements.insert(v, e);
                }
            }
        }
    }

    // Cross-batch ordering: group events per entity and compare pairs within
    // each (short) group.
    let mut batch_of = vec![usize::MAX; events.len()];
    for (b, batch) in plan.batches.iter().enumerate() {
        for &e in batch {
            batch_of[e] = b;
        }
    }
    let mut per_user: HashMap<u32, Vec<usize>> = HashMap::new();
    let mut per_element: HashMap<u32, Vec<usize>> = HashMap::new();
    for (e, event) in events.iter().enumerate() {
        per_user.entry(event.user).or_default().push(e);
        for &v in &event.set {
            per_element.entry(v).or_default().push(e);
        }
    }
    let check_group = |group: &[usize], violations: &mut Vec<Violation>| {
        for (i, &a) in group.iter().enumerate() {
            for &b in &group[i + 1..] {
                if events[a].timestamp < events[b].timestamp
                    && batch_of[a] != usize::MAX
                    && batch_of[b] != usize::MAX
                    && batch_of[a] >= batch_of[b]
                {
                    violations.push(Violation::OrderInversion {
                        earlier_event: a,
                        later_event: b,
                        earlier_batch: batch_of[a],
                        later_batch: batch_of[b],
                    });
                }
            }
        }
    };
    for group in per_user.values() {
        check_group(group, &mut violations);
    }
    for group in per_element.values() {
        check_group(group, &mut violations);
    }
    violations.sort_by_key(|v| match v {
        Violation::Coverage { event, .. } => (0, *event, 0),
        Violation::DuplicateUser { batch, events, .. } => (1, *batch, events.1),
        Violation::DuplicateElement { batch, events, .. } => (2, *batch, events.1),
        Violation::OrderInversion {
            earlier_event,
            later_event,
            ..
        } => (3, *earlier_event, *later_event),
    });
    violations.dedup();
    Ok(violations)
}
