//! The memory bank: evolving, non-trainable state vectors for all users and
//! elements, last-update timestamps, and per-user interaction histories.
//!
//! Values written here are detached: once stored they are plain numbers with
//! no gradient linkage. Element writes additionally keep a version log keyed
//! by the global event index, so a later event can read the state an element
//! had just before it regardless of the order batches were executed in.

use std::collections::BTreeSet;

use crate::data::{ElementId, UserId};
use crate::numerics::Tensor;
use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("{entity} id {id} out of range (limit {limit})")]
    OutOfRange {
        entity: &'static str,
        id: usize,
        limit: usize,
    },
    #[error("timestamp regression writing {entity} {id}: {t} < last {last} (batching bug)")]
    TimestampRegression {
        entity: &'static str,
        id: usize,
        t: f64,
        last: f64,
    },
}

/// One detached element write: the value as of (the end of) `event_idx`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementVersion<T> {
    pub event_idx: usize,
    pub values: Vec<T>,
}

/// Evolving state for `m` users and `n` elements, each a `dim`-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank<T> {
    dim: usize,
    user_values: Vec<T>,
    user_last_time: Vec<f64>,
    element_values: Vec<T>,
    element_last_time: Vec<f64>,
    element_versions: Vec<Vec<ElementVersion<T>>>,
}

impl<T: Real> MemoryBank<T> {
    /// All memories start as zero vectors.
    pub fn new(num_users: usize, num_elements: usize, dim: usize) -> Self {
        MemoryBank {
            dim,
            user_values: vec![T::zero(); num_users * dim],
            user_last_time: vec![0.0; num_users],
            element_values: vec![T::zero(); num_elements * dim],
            element_last_time: vec![0.0; num_elements],
            element_versions: vec![Vec::new(); num_elements],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_users(&self) -> usize {
        self.user_last_time.len()
    }

    pub fn num_elements(&self) -> usize {
        self.element_last_time.len()
    }

    /// Zero all memories and timestamps and clear the version log.
    pub fn reset(&mut self) {
        self.user_values.iter_mut().for_each(|v| *v = T::zero());
        self.element_values.iter_mut().for_each(|v| *v = T::zero());
        self.user_last_time.iter_mut().for_each(|t| *t = 0.0);
        self.element_last_time.iter_mut().for_each(|t| *t = 0.0);
        self.element_versions.iter_mut().for_each(|v| v.clear());
    }

    /// Start a new chronological pass while keeping memory values: clears
    /// timestamps and the version log so the sequence can be replayed.
    pub fn begin_pass(&mut self) {
        self.user_last_time.iter_mut().for_each(|t| *t = 0.0);
        self.element_last_time.iter_mut().for_each(|t| *t = 0.0);
        self.element_versions.iter_mut().for_each(|v| v.clear());
    }

    /// Zero one user's state (isolated-replay cleanup).
    pub fn zero_user(&mut self, user: UserId) {
        let u = user as usize;
        self.user_values[u * self.dim..(u + 1) * self.dim]
            .iter_mut()
            .for_each(|v| *v = T::zero());
        self.user_last_time[u] = 0.0;
    }

    /// Zero one element's state and version log (isolated-replay cleanup).
    pub fn zero_element(&mut self, element: ElementId) {
        let v = element as usize;
        self.element_values[v * self.dim..(v + 1) * self.dim]
            .iter_mut()
            .for_each(|x| *x = T::zero());
        self.element_last_time[v] = 0.0;
        self.element_versions[v].clear();
    }

    pub fn user_memory(&self, user: UserId) -> Result<(&[T], f64), MemoryError> {
        let u = user as usize;
        if u >= self.num_users() {
            return Err(MemoryError::OutOfRange {
                entity: "user",
                id: u,
                limit: self.num_users(),
            });
        }
        Ok((
            &self.user_values[u * self.dim..(u + 1) * self.dim],
            self.user_last_time[u],
        ))
    }

    pub fn element_memory(&self, element: ElementId) -> Result<(&[T], f64), MemoryError> {
        let v = element as usize;
        if v >= self.num_elements() {
            return Err(MemoryError::OutOfRange {
                entity: "element",
                id: v,
                limit: self.num_elements(),
            });
        }
        Ok((
            &self.element_values[v * self.dim..(v + 1) * self.dim],
            self.element_last_time[v],
        ))
    }

    /// Detached read returning an owned tensor.
    pub fn read_user(&self, user: UserId) -> Result<(Tensor<T>, f64), MemoryError> {
        let (values, t) = self.user_memory(user)?;
        Ok((Tensor::vector(values.to_vec()), t))
    }

    /// Detached read returning an owned tensor.
    pub fn read_element(&self, element: ElementId) -> Result<(Tensor<T>, f64), MemoryError> {
        let (values, t) = self.element_memory(element)?;
        Ok((Tensor::vector(values.to_vec()), t))
    }

    /// The element's memory as seen by the event at `event_idx`: the last
    /// version written by a strictly earlier event, or zeros before any write.
    pub fn element_memory_as_of(
        &self,
        element: ElementId,
        event_idx: usize,
    ) -> Result<Vec<T>, MemoryError> {
        let v = element as usize;
        if v >= self.num_elements() {
            return Err(MemoryError::OutOfRange {
                entity: "element",
                id: v,
                limit: self.num_elements(),
            });
        }
        let versions = &self.element_versions[v];
        let pos = versions.partition_point(|ver| ver.event_idx < event_idx);
        Ok(if pos == 0 {
            vec![T::zero(); self.dim]
        } else {
            versions[pos - 1].values.clone()
        })
    }

    pub fn write_user(&mut self, user: UserId, values: &[T], t: f64) -> Result<(), MemoryError> {
        let u = user as usize;
        if u >= self.num_users() {
            return Err(MemoryError::OutOfRange {
                entity: "user",
                id: u,
                limit: self.num_users(),
            });
        }
        if t < self.user_last_time[u] {
            return Err(MemoryError::TimestampRegression {
                entity: "user",
                id: u,
                t,
                last: self.user_last_time[u],
            });
        }
        debug_assert_eq!(values.len(), self.dim);
        self.user_values[u * self.dim..(u + 1) * self.dim].copy_from_slice(values);
        self.user_last_time[u] = t;
        Ok(())
    }

    /// Write an element memory, recording a version for `event_idx`.
    /// Writes must arrive in non-descending `event_idx` order per element,
    /// which the batch planner guarantees.
    pub fn write_element(
        &mut self,
        element: ElementId,
        values: &[T],
        t: f64,
        event_idx: usize,
    ) -> Result<(), MemoryError> {
        let v = element as usize;
        if v >= self.num_elements() {
            return Err(MemoryError::OutOfRange {
                entity: "element",
                id: v,
                limit: self.num_elements(),
            });
        }
        if t < self.element_last_time[v] {
            return Err(MemoryError::TimestampRegression {
                entity: "element",
                id: v,
                t,
                last: self.element_last_time[v],
            });
        }
        debug_assert_eq!(values.len(), self.dim);
        self.element_values[v * self.dim..(v + 1) * self.dim].copy_from_slice(values);
        self.element_last_time[v] = t;
        debug_assert!(self.element_versions[v]
            .last()
            .map_or(true, |ver| ver.event_idx <= event_idx));
        self.element_versions[v].push(ElementVersion {
            event_idx,
            values: values.to_vec(),
        });
        Ok(())
    }

    /// Deep value copy.
    pub fn snapshot(&self) -> MemoryBank<T> {
        self.clone()
    }

    /// Restore a previously taken snapshot.
    pub fn restore(&mut self, snapshot: &MemoryBank<T>) {
        *self = snapshot.clone();
    }

    // Serialization accessors.
    pub fn user_values(&self) -> &[T] {
        &self.user_values
    }
    pub fn element_values(&self) -> &[T] {
        &self.element_values
    }
    pub fn user_last_times(&self) -> &[f64] {
        &self.user_last_time
    }
    pub fn element_last_times(&self) -> &[f64] {
        &self.element_last_time
    }
    pub fn element_versions(&self) -> &[Vec<ElementVersion<T>>] {
        &self.element_versions
    }

    pub fn from_parts(
        dim: usize,
        user_values: Vec<T>,
        user_last_time: Vec<f64>,
        element_values: Vec<T>,
        element_last_time: Vec<f64>,
        element_versions: Vec<Vec<ElementVersion<T>>>,
    ) -> Self {
        MemoryBank {
            dim,
            user_values,
            user_last_time,
            element_values,
            element_last_time,
            element_versions,
        }
    }
}

/// Per-user interaction history: the multiset of interacted elements with
/// timestamps, plus the distinct-element set backing the indicator vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserHistory {
    /// (element, timestamp) per (event, element) incidence, append order.
    /// Repeats across events are preserved.
    pub occurrences: Vec<(ElementId, f64)>,
    /// Distinct interacted elements, ascending.
    pub distinct: BTreeSet<ElementId>,
    /// The set of the user's most recent event, sorted.
    pub last_set: Vec<ElementId>,
    pub last_time: f64,
    pub last_event_idx: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryIndex {
    users: Vec<UserHistory>,
}

impl HistoryIndex {
    pub fn new(num_users: usize) -> Self {
        HistoryIndex {
            users: vec![UserHistory::default(); num_users],
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, user: UserId) -> &UserHistory {
        &self.users[user as usize]
    }

    pub fn clear(&mut self) {
        for u in &mut self.users {
            *u = UserHistory::default();
        }
    }

    /// Reset one user's history (isolated-replay cleanup).
    pub fn reset_user(&mut self, user: UserId) {
        self.users[user as usize] = UserHistory::default();
    }

    /// Overwrite the most-recent-event fields (checkpoint restore).
    pub fn set_last_event(
        &mut self,
        user: UserId,
        set: &[ElementId],
        t: f64,
        event_idx: Option<usize>,
    ) {
        let h = &mut self.users[user as usize];
        h.last_set = set.to_vec();
        h.last_time = t;
        h.last_event_idx = event_idx;
    }

    /// Append one event's set to the user's history; each element of the set
    /// is recorded once with the event timestamp.
    pub fn append(&mut self, user: UserId, set: &[ElementId], t: f64, event_idx: usize) {
        let h = &mut self.users[user as usize];
        debug_assert!(t >= h.last_time, "history appended out of order");
        for &v in set {
            h.occurrences.push((v, t));
            h.distinct.insert(v);
        }
        h.last_set = set.to_vec();
        h.last_time = t;
        h.last_event_idx = Some(event_idx);
    }

    /// Indicator over all `n` elements: 1 where the user has interacted.
    pub fn indicator(&self, user: UserId, num_elements: usize) -> Vec<bool> {
        let mut tau = vec![false; num_elements];
        for &v in &self.users[user as usize].distinct {
            tau[v as usize] = true;
        }
        tau
    }

    pub fn snapshot(&self) -> HistoryIndex {
        self.clone()
    }

    pub fn restore(&mut self, snapshot: &HistoryIndex) {
        *self = snapshot.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_bank_reads_zeros() {
        let bank = MemoryBank::<f64>::new(3, 4, 2);
        let (values, t) = bank.read_user(1).unwrap();
        assert_eq!(values.values(), &[0.0, 0.0]);
        assert_eq!(t, 0.0);
        let (values, t) = bank.read_element(3).unwrap();
        assert_eq!(values.values(), &[0.0, 0.0]);
        assert_eq!(t, 0.0);
    }

    #[test]
    fn read_your_write_and_reset_idempotence() {
        let mut bank = MemoryBank::<f64>::new(2, 2, 2);
        bank.write_user(0, &[0.5, -0.5], 3.0).unwrap();
        bank.write_element(1, &[1.0, 2.0], 3.0, 7).unwrap();
        assert_eq!(
            bank.read_user(0).unwrap(),
            (Tensor::vector(vec![0.5, -0.5]), 3.0)
        );
        assert_eq!(bank.read_element(1).unwrap().0.values(), &[1.0, 2.0]);
        // Two reads without an intervening write are identical.
        assert_eq!(bank.read_user(0).unwrap(), bank.read_user(0).unwrap());

        bank.reset();
        let once = bank.clone();
        bank.reset();
        assert_eq!(bank, once);
        assert_eq!(bank.read_user(0).unwrap().0.values(), &[0.0, 0.0]);
    }

    #[test]
    fn timestamp_regression_is_rejected() {
        let mut bank = MemoryBank::<f64>::new(1, 1, 1);
        bank.write_user(0, &[1.0], 5.0).unwrap();
        assert!(matches!(
            bank.write_user(0, &[2.0], 3.0),
            Err(MemoryError::TimestampRegression { .. })
        ));
        bank.write_element(0, &[1.0], 5.0, 0).unwrap();
        assert!(matches!(
            bank.write_element(0, &[2.0], 3.0, 1),
            Err(MemoryError::TimestampRegression { .. })
        ));
        // Equal timestamps are fine.
        bank.write_element(0, &[2.0], 5.0, 2).unwrap();
    }

    #[test]
    fn out_of_range_ids_error() {
        let bank = MemoryBank::<f64>::new(1, 1, 1);
        assert!(bank.read_user(1).is_err());
        assert!(bank.read_element(9).is_err());
    }

    #[test]
    fn writes_to_distinct_entities_commute() {
        let mut a = MemoryBank::<f64>::new(2, 2, 1);
        let mut b = MemoryBank::<f64>::new(2, 2, 1);
        a.write_user(0, &[1.0], 1.0).unwrap();
        a.write_user(1, &[2.0], 1.0).unwrap();
        b.write_user(1, &[2.0], 1.0).unwrap();
        b.write_user(0, &[1.0], 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn versioned_reads_respect_event_order() {
        let mut bank = MemoryBank::<f64>::new(1, 1, 1);
        bank.write_element(0, &[1.0], 1.0, 10).unwrap();
        bank.write_element(0, &[2.0], 2.0, 20).unwrap();
        assert_eq!(bank.element_memory_as_of(0, 5).unwrap(), vec![0.0]);
        assert_eq!(bank.element_memory_as_of(0, 10).unwrap(), vec![0.0]);
        assert_eq!(bank.element_memory_as_of(0, 15).unwrap(), vec![1.0]);
        assert_eq!(bank.element_memory_as_of(0, 20).unwrap(), vec![1.0]);
        assert_eq!(bank.element_memory_as_of(0, 25).unwrap(), vec![2.0]);
        // The plain read sees the latest value.
        assert_eq!(bank.read_element(0).unwrap().0.values(), &[2.0]);
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut bank = MemoryBank::<f64>::new(1, 1, 1);
        bank.write_user(0, &[1.5], 1.0).unwrap();
        let snap = bank.snapshot();
        bank.write_user(0, &[9.0], 2.0).unwrap();
        bank.restore(&snap);
        assert_eq!(bank, snap);
        assert_eq!(bank.read_user(0).unwrap().0.values(), &[1.5]);
    }

    #[test]
    fn history_keeps_multiset_semantics() {
        let mut history = HistoryIndex::new(1);
        history.append(0, &[0, 1], 1.0, 0);
        history.append(0, &[0], 2.0, 1);
        let h = history.user(0);
        assert_eq!(h.occurrences, vec![(0, 1.0), (1, 1.0), (0, 2.0)]);
        assert_eq!(h.distinct.iter().copied().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(h.last_set, vec![0]);
        let tau = history.indicator(0, 3);
        assert_eq!(tau, vec![true, true, false]);
        assert_eq!(tau.iter().filter(|b| **b).count(), 2);
    }

    #[test]
    fn fresh_history_indicator_is_all_zeros() {
        let history = HistoryIndex::new(2);
        assert!(!history.indicator(1, 4).iter().any(|b| *b));
        assert!(history.user(1).occurrences.is_empty());
    }
}
