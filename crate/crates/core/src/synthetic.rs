//! Deterministic synthetic corpora for tests and benchmarks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, ElementId, InteractionEvent, UserId};

/// Build a dataset from events; keys are synthesized from ids and events are
/// stably sorted by (timestamp, input order).
pub fn dataset_from_events(mut events: Vec<InteractionEvent>, num_users: usize, num_elements: usize) -> Dataset {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        events[a]
            .timestamp
            .partial_cmp(&events[b].timestamp)
            .expect("finite timestamps")
            .then_with(|| a.cmp(&b))
    });
    events = order.iter().map(|&i| events[i].clone()).collect();
    for e in &mut events {
        e.set.sort_unstable();
        e.set.dedup();
    }
    let mut per_user_events = vec![Vec::new(); num_users];
    for (i, e) in events.iter().enumerate() {
        per_user_events[e.user as usize].push(i);
    }
    Dataset {
        user_keys: (0..num_users).map(|u| format!("u{u}")).collect(),
        element_keys: (0..num_elements).map(|v| format!("v{v}")).collect(),
        events,
        per_user_events,
    }
}

/// Strictly periodic corpus: each user alternates between two small fixed
/// sets drawn from a user-specific window of the vocabulary, so frequency
/// plus recency fully determine the next set.
pub fn periodic_dataset(num_users: usize, num_elements: usize, sets_per_user: usize) -> Dataset {
    let mut events = Vec::new();
    for u in 0..num_users {
        let base = (3 * u) % num_elements;
        let first: Vec<ElementId> = [base, base + 1]
            .iter()
            .map(|v| (v % num_elements) as ElementId)
            .collect();
        let second: Vec<ElementId> = [base + 2, base + 4, base + 7]
            .iter()
            .map(|v| (v % num_elements) as ElementId)
            .collect();
        for k in 0..sets_per_user {
            let set = if k % 2 == 0 { first.clone() } else { second.clone() };
            events.push(InteractionEvent {
                user: u as UserId,
                set,
                timestamp: (k * num_users + u) as f64,
            });
        }
    }
    dataset_from_events(events, num_users, num_elements)
}

/// Users share transition patterns: the vocabulary is split into pattern
/// groups arranged on a ring, and each user walks a phase-shifted arc of the
/// ring, one pattern per set (plus a decoy element that never appears in any
/// evaluation target). A user's last two sets are patterns the user has never
/// interacted with, but other users have - predicting them requires the
/// shared transition structure.
pub fn collaborative_dataset(
    num_patterns: usize,
    pattern_size: usize,
    num_decoys: usize,
    users_per_phase: usize,
    sets_per_user: usize,
) -> Dataset {
    assert!(sets_per_user <= num_patterns, "arcs must not wrap");
    let num_users = num_patterns * users_per_phase;
    let num_elements = num_patterns * pattern_size + num_decoys;
    let pattern = |p: usize| -> Vec<ElementId> {
        (0..pattern_size)
            .map(|i| ((p % num_patterns) * pattern_size + i) as ElementId)
            .collect()
    };
    let mut events = Vec::new();
    for u in 0..num_users {
        let phase = u % num_patterns;
        for k in 0..sets_per_user {
            let mut set = pattern(phase + k);
            if num_decoys > 0 {
                let decoy = num_patterns * pattern_size + (u + k) % num_decoys;
                set.push(decoy as ElementId);
            }
            events.push(InteractionEvent {
                user: u as UserId,
                set,
                timestamp: (k * num_users + u) as f64,
            });
        }
    }
    dataset_from_events(events, num_users, num_elements)
}

/// Many users, few conflicts: each user's sets draw from a private slice of a
/// large vocabulary, so batches grow wide and the planner packs the whole
/// corpus into a handful of batches.
pub fn bench_dataset(num_users: usize, sets_per_user: usize, set_size: usize) -> Dataset {
    let num_elements = num_users * set_size;
    let mut events = Vec::new();
    for u in 0..num_users {
        for k in 0..sets_per_user {
            let set: Vec<ElementId> = (0..set_size)
                .map(|i| (u * set_size + i) as ElementId)
                .collect();
            events.push(InteractionEvent {
                user: u as UserId,
                set,
                timestamp: (k * num_users + u) as f64,
            });
        }
    }
    dataset_from_events(events, num_users, num_elements)
}

/// Random sequence with controlled entity counts; timestamps are
/// non-descending with occasional ties.
pub fn random_dataset(
    rng: &mut ChaCha8Rng,
    num_users: usize,
    num_elements: usize,
    num_events: usize,
    max_set_size: usize,
) -> Dataset {
    let mut events = Vec::new();
    let mut t = 0.0f64;
    for _ in 0..num_events {
        if rng.gen_bool(0.8) {
            t += rng.gen_range(0.25..2.0);
        }
        let user = rng.gen_range(0..num_users) as UserId;
        let size = rng.gen_range(1..=max_set_size.min(num_elements));
        let mut set = std::collections::BTreeSet::new();
        while set.len() < size {
            set.insert(rng.gen_range(0..num_elements) as ElementId);
        }
        events.push(InteractionEvent {
            user,
            set: set.into_iter().collect(),
            timestamp: t,
        });
    }
    dataset_from_events(events, num_users, num_elements)
}
