//! Interaction-log ingestion, preprocessing, vocabularies and splits.

mod ingest;
mod preprocess;
mod split;

pub use ingest::{ingest, ingest_reader, Format};
pub use preprocess::{preprocess, PreprocessConfig};
pub use split::{
    split, EvalTarget, InductiveEval, InductivePlan, SplitMode, SplitPlan, TransductivePlan,
};

use serde::{Deserialize, Serialize};

pub type UserId = u32;
pub type ElementId = u32;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("no records found")]
    Empty,
    #[error("empty dataset: preprocessing removed every user")]
    EmptyAfterPreprocess,
    #[error("invalid preprocess configuration: {0}")]
    BadConfig(String),
    #[error("user {user} has only {len} sets; the transductive split needs at least 3")]
    TooFewSets { user: String, len: usize },
    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadRatios([f64; 3]),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One raw user-set interaction as read from a log file. Element duplicates
/// within a record are removed at ingestion; records themselves are never
/// globally de-duplicated.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEvent {
    pub user_key: String,
    pub timestamp: f64,
    /// Distinct element keys, first-occurrence order.
    pub elements: Vec<String>,
}

/// One interaction in the re-indexed universal sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user: UserId,
    /// Sorted distinct element ids; never empty.
    pub set: Vec<ElementId>,
    pub timestamp: f64,
}

/// A preprocessed corpus: contiguous vocabularies, the universal sequence
/// sorted non-descending by timestamp, and per-user event indices in
/// temporal order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Original user keys, indexed by user id.
    pub user_keys: Vec<String>,
    /// Original element keys, indexed by element id.
    pub element_keys: Vec<String>,
    /// Universal sequence, sorted by (timestamp, original ingest order).
    pub events: Vec<InteractionEvent>,
    /// For each user, indices of their events in `events`, in temporal order.
    pub per_user_events: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn num_elements(&self) -> usize {
        self.element_keys.len()
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    /// Mean set size.
    pub fn elements_per_set(&self) -> f64 {
        if self.events.is_empty() {
            return 0.0;
        }
        let total: usize = self.events.iter().map(|e| e.set.len()).sum();
        total as f64 / self.events.len() as f64
    }

    /// Mean sequence length per user.
    pub fn sets_per_user(&self) -> f64 {
        if self.user_keys.is_empty() {
            return 0.0;
        }
        self.events.len() as f64 / self.user_keys.len() as f64
    }

    /// Rebuild the raw-event view (used by idempotence checks and persistence).
    pub fn to_raw_events(&self) -> Vec<RawEvent> {
        self.events
            .iter()
            .map(|e| RawEvent {
                user_key: self.user_keys[e.user as usize].clone(),
                timestamp: e.timestamp,
                elements: e
                    .set
                    .iter()
                    .map(|&v| self.element_keys[v as usize].clone())
                    .collect(),
            })
            .collect()
    }
}

/// JSON manifest persisted next to the re-indexed events file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub user_keys: Vec<String>,
    pub element_keys: Vec<String>,
    pub num_events: usize,
    pub split: Option<SplitPlan>,
}

/// Persist a dataset as `manifest.json` plus `events.csv` (ingestion format,
/// re-indexed decimal ids) in `dir`.
pub fn save_dataset(
    dir: &std::path::Path,
    dataset: &Dataset,
    split: Option<&SplitPlan>,
) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        user_keys: dataset.user_keys.clone(),
        element_keys: dataset.element_keys.clone(),
        num_events: dataset.events.len(),
        split: split.cloned(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomically(&dir.join("manifest.json"), json.as_bytes())?;

    let mut out = String::from("user,timestamp,elements\n");
    for e in &dataset.events {
        let elems: Vec<String> = e.set.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{},{},{}\n", e.user, e.timestamp, elems.join("|")));
    }
    write_atomically(&dir.join("events.csv"), out.as_bytes())?;
    Ok(())
}

/// Load a dataset persisted by [`save_dataset`].
pub fn load_dataset(dir: &std::path::Path) -> Result<(Dataset, Option<SplitPlan>), DataError> {
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let raw = ingest(&dir.join("events.csv"), Format::Csv)?;
    let mut events = Vec::with_capacity(raw.len());
    for (i, r) in raw.iter().enumerate() {
        let user: UserId = r
            .user_key
            .parse()
            .map_err(|_| DataError::Manifest(format!("event {i}: user key {} is not an id", r.user_key)))?;
        let mut set = Vec::with_capacity(r.elements.len());
        for e in &r.elements {
            let id: ElementId = e
                .parse()
                .map_err(|_| DataError::Manifest(format!("event {i}: element key {e} is not an id")))?;
            if id as usize >= manifest.element_keys.len() {
                return Err(DataError::Manifest(format!("event {i}: element id {id} out of range")));
            }
            set.push(id);
        }
        set.sort_unstable();
        if user as usize >= manifest.user_keys.len() {
            return Err(DataError::Manifest(format!("event {i}: user id {user} out of range")));
        }
        events.push(InteractionEvent {
            user,
            set,
            timestamp: r.timestamp,
        });
    }
    if events.len() != manifest.num_events {
        return Err(DataError::Manifest(format!(
            "manifest lists {} events, file holds {}",
            manifest.num_events,
            events.len()
        )));
    }
    let mut per_user_events = vec![Vec::new(); manifest.user_keys.len()];
    for (i, e) in events.iter().enumerate() {
        per_user_events[e.user as usize].push(i);
    }
    Ok((
        Dataset {
            user_keys: manifest.user_keys,
            element_keys: manifest.element_keys,
            events,
            per_user_events,
        },
        manifest.split,
    ))
}

/// Write a file via a temp sibling and rename, so readers never observe a
/// partial file.
pub fn write_atomically(path: &std::path::Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
