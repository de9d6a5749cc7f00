//! Frequency filtering, length trimming and re-indexing of raw logs.

use std::collections::HashMap;

use super::{DataError, Dataset, InteractionEvent, RawEvent};

#[derive(Clone, Copy, Debug)]
pub struct PreprocessConfig {
    /// Fraction of element occurrences the kept vocabulary must cover.
    pub coverage: f64,
    /// Users with fewer surviving sets are dropped.
    pub min_len: usize,
    /// Each user keeps at most this many most recent sets.
    pub max_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            coverage: 0.8,
            min_len: 4,
            max_len: 20,
        }
    }
}

/// Apply the preprocessing pipeline:
///
/// 1. keep the smallest set of most-frequent elements whose occurrences cover
///    at least `coverage` of all element occurrences (ties broken by smaller
///    element key);
/// 2. drop filtered elements from each event and drop events left empty;
/// 3. drop users with fewer than `min_len` surviving sets;
/// 4. crop each user's sequence to its most recent `max_len` sets;
/// 5. re-index users and elements contiguously (sorted by original key);
/// 6. sort events non-descending by timestamp, ties by original input order.
pub fn preprocess(raw: &[RawEvent], config: PreprocessConfig) -> Result<Dataset, DataError> {
    if raw.is_empty() {
        return Err(DataError::Empty);
    }
    if !(config.coverage > 0.0 && config.coverage <= 1.0) {
        return Err(DataError::BadConfig(format!(
            "coverage {} outside (0, 1]",
            config.coverage
        )));
    }
    if config.min_len < 1 || config.min_len > config.max_len {
        return Err(DataError::BadConfig(format!(
            "need 1 <= min_len <= max_len, got {}..{}",
            config.min_len, config.max_len
        )));
    }

    // (1) occurrence counts; one occurrence per (event, element) pair.
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut total: u64 = 0;
    for event in raw {
        for e in &event.elements {
            *counts.entry(e.as_str()).or_insert(0) += 1;
            total += 1;
        }
    }
    let mut by_freq: Vec<(&str, u64)> = counts.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let threshold = config.coverage * total as f64;
    let mut kept: std::collections::HashSet<&str> = std::collections::HashSet::new();
    let mut cum: u64 = 0;
    for (key, count) in &by_freq {
        kept.insert(key);
        cum += count;
        if cum as f64 >= threshold {
            break;
        }
    }

    // (2) filter events.
    struct Survivor<'a> {
        original: usize,
        user: &'a str,
        timestamp: f64,
        elements: Vec<&'a str>,
    }
    let mut survivors: Vec<Survivor> = Vec::new();
    for (original, event) in raw.iter().enumerate() {
        let elements: Vec<&str> = event
            .elements
            .iter()
            .map(|e| e.as_str())
            .filter(|e| kept.contains(e))
            .collect();
        if !elements.is_empty() {
            survivors.push(Survivor {
                original,
                user: event.user_key.as_str(),
                timestamp: event.timestamp,
                elements,
            });
        }
    }

    // (3)+(4) per-user length rules over temporally ordered sequences.
    let mut per_user: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, s) in survivors.iter().enumerate() {
        per_user.entry(s.user).or_default().push(i);
    }
    let mut selected: Vec<usize> = Vec::new();
    for indices in per_user.values_mut() {
        indices.sort_by(|&a, &b| {
            survivors[a]
                .timestamp
                .partial_cmp(&survivors[b].timestamp)
                .expect("finite timestamps")
                .then_with(|| survivors[a].original.cmp(&survivors[b].original))
        });
        if indices.len() < config.min_len {
            continue;
        }
        let start = indices.len().saturating_sub(config.max_len);
        selected.extend_from_slice(&indices[start..]);
    }
    if selected.is_empty() {
        return Err(DataError::EmptyAfterPreprocess);
    }

    // (5) contiguous ids, sorted by original key.
    let mut user_keys: Vec<String> = selected
        .iter()
        .map(|&i| survivors[i].user.to_string())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    user_keys.sort();
    let mut element_keys: Vec<String> = selected
        .iter()
        .flat_map(|&i| survivors[i].elements.iter().map(|e| e.to_string()))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    element_keys.sort();
    let user_id: HashMap<&str, u32> = user_keys
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i as u32))
        .collect();
    let element_id: HashMap<&str, u32> = element_keys
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i as u32))
        .collect();

    // (6) universal sequence sorted by (timestamp, original order).
    selected.sort_by(|&a, &b| {
        survivors[a]
            .timestamp
            .partial_cmp(&survivors[b].timestamp)
            .expect("finite timestamps")
            .then_with(|| survivors[a].original.cmp(&survivors[b].original))
    });
    let events: Vec<InteractionEvent> = selected
        .iter()
        .map(|&i| {
            let s = &survivors[i];
            let mut set: Vec<u32> = s.elements.iter().map(|e| element_id[e]).collect();
            set.sort_unstable();
            InteractionEvent {
                user: user_id[s.user],
                set,
                timestamp: s.timestamp,
            }
        })
        .collect();
    let mut per_user_events = vec![Vec::new(); user_keys.len()];
    for (i, e) in events.iter().enumerate() {
        per_user_events[e.user as usize].push(i);
    }

    Ok(Dataset {
        user_keys,
        element_keys,
        events,
        per_user_events,
    })
}
