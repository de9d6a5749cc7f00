//! Checkpoint persistence: a flat binary of 64-bit little-endian reals plus
//! a JSON index mapping tensor names to shapes and offsets.
//!
//! A checkpoint bundles parameters, optimizer state, the memory bank
//! snapshot (including its version log, so evaluation can resume without
//! replaying training data), the interaction histories, and configuration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{write_atomically, SplitMode};
use crate::memory::{ElementVersion, HistoryIndex, MemoryBank};
use crate::model::{ModelConfig, ModelParameters, TrainConfig};
use crate::numerics::{AdamState, Shape, Tensor};
use crate::scalar::Real;

pub const BIN_FILE: &str = "checkpoint.bin";
pub const INDEX_FILE: &str = "checkpoint.json";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("binary payload truncated: need {need} values, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    /// Offset in 8-byte elements from the start of the binary file.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub protocol: SplitMode,
    pub best_epoch: usize,
    pub best_average_ndcg: f64,
    pub optimizer_step: u64,
    pub num_users: usize,
    pub num_elements: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    tensors: BTreeMap<String, TensorEntry>,
    meta: CheckpointMeta,
}

/// Everything needed to evaluate or resume a trained model.
pub struct Checkpoint<T> {
    pub params: ModelParameters<T>,
    pub optimizer: Option<AdamState<T>>,
    pub bank: MemoryBank<T>,
    pub history: HistoryIndex,
    pub meta: CheckpointMeta,
}

struct Writer {
    values: Vec<f64>,
    tensors: BTreeMap<String, TensorEntry>,
}

impl Writer {
    fn new() -> Self {
        Writer {
            values: Vec::new(),
            tensors: BTreeMap::new(),
        }
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, values: impl Iterator<Item = f64>) {
        let offset = self.values.len();
        self.values.extend(values);
        self.tensors.insert(name.to_string(), TensorEntry { shape, offset });
    }

    fn push_tensor<T: Real>(&mut self, name: &str, tensor: &Tensor<T>) {
        let shape = match tensor.shape() {
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        };
        self.push(name, shape, tensor.values().iter().map(|v| v.to_f64_lossy()));
    }
}

struct Reader {
    values: Vec<f64>,
    tensors: BTreeMap<String, TensorEntry>,
}

impl Reader {
    fn entry(&self, name: &str) -> Result<(&TensorEntry, &[f64]), CheckpointError> {
        let entry = self
            .tensors
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        let len: usize = entry.shape.iter().product();
        if entry.offset + len > self.values.len() {
            return Err(CheckpointError::Truncated {
                need: entry.offset + len,
                have: self.values.len(),
            });
        }
        Ok((entry, &self.values[entry.offset..entry.offset + len]))
    }

    fn tensor<T: Real>(&self, name: &str, expected: Shape) -> Result<Tensor<T>, CheckpointError> {
        let (entry, values) = self.entry(name)?;
        let found = entry.shape.clone();
        let ok = match expected {
            Shape::Vector(n) => found == vec![n],
            Shape::Matrix(r, c) => found == vec![r, c],
        };
        if !ok {
            let expected = match expected {
                Shape::Vector(n) => vec![n],
                Shape::Matrix(r, c) => vec![r, c],
            };
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected,
                found,
            });
        }
        let data: Vec<T> = values.iter().map(|v| T::from_f64_lossy(*v)).collect();
        Ok(match expected {
            Shape::Vector(_) => Tensor::vector(data),
            Shape::Matrix(r, c) => Tensor::matrix(r, c, data).expect("validated length"),
        })
    }

    fn raw(&self, name: &str) -> Result<&[f64], CheckpointError> {
        Ok(self.entry(name)?.1)
    }
}

/// Write `checkpoint.bin` and `checkpoint.json` into `dir`.
pub fn save_checkpoint<T: Real>(dir: &Path, checkpoint: &Checkpoint<T>) -> Result<(), CheckpointError> {
    std::fs::create_dir_all(dir)?;
    let mut w = Writer::new();

    for (name, tensor) in checkpoint.params.named_tensors() {
        w.push_tensor(&format!("model.{name}"), tensor);
    }
    if let Some(opt) = &checkpoint.optimizer {
        let (first, second) = opt.moments();
        for ((name, _), (m, v)) in checkpoint
            .params
            .named_tensors()
            .iter()
            .zip(first.iter().zip(second))
        {
            w.push_tensor(&format!("opt.first.{name}"), m);
            w.push_tensor(&format!("opt.second.{name}"), v);
        }
    }

    let bank = &checkpoint.bank;
    let (m, n, d) = (bank.num_users(), bank.num_elements(), bank.dim());
    w.push("bank.user_memory", vec![m, d], bank.user_values().iter().map(|v| v.to_f64_lossy()));
    w.push("bank.element_memory", vec![n, d], bank.element_values().iter().map(|v| v.to_f64_lossy()));
    w.push("bank.user_last_time", vec![m], bank.user_last_times().iter().copied());
    w.push("bank.element_last_time", vec![n], bank.element_last_times().iter().copied());
    let total_versions: usize = bank.element_versions().iter().map(|v| v.len()).sum();
    let mut version_meta = Vec::with_capacity(total_versions * 2);
    let mut version_values = Vec::with_capacity(total_versions * d);
    for (elem, versions) in bank.element_versions().iter().enumerate() {
        for version in versions {
            version_meta.push(elem as f64);
            version_meta.push(version.event_idx as f64);
            version_values.extend(version.values.iter().map(|v| v.to_f64_lossy()));
        }
    }
    w.push("bank.version_meta", vec![total_versions, 2], version_meta.into_iter());
    w.push("bank.version_values", vec![total_versions, d], version_values.into_iter());

    let total_occurrences: usize = (0..checkpoint.history.num_users())
        .map(|u| checkpoint.history.user(u as u32).occurrences.len())
        .sum();
    let mut occ = Vec::with_capacity(total_occurrences * 3);
    for u in 0..checkpoint.history.num_users() {
        let h = checkpoint.history.user(u as u32);
        for &(v, t) in &h.occurrences {
            occ.push(u as f64);
            occ.push(v as f64);
            occ.push(t);
        }
    }
    w.push("history.occurrences", vec![total_occurrences, 3], occ.into_iter());
    let mut last_sets = Vec::new();
    for u in 0..checkpoint.history.num_users() {
        let h = checkpoint.history.user(u as u32);
        for &v in &h.last_set {
            last_sets.push(u as f64);
            last_sets.push(v as f64);
            last_sets.push(h.last_time);
            last_sets.push(h.last_event_idx.map(|e| e as f64).unwrap_or(-1.0));
        }
    }
    let rows = last_sets.len() / 4;
    w.push("history.last_sets", vec![rows, 4], last_sets.into_iter());

    let index = IndexFile {
        version: 1,
        tensors: w.tensors,
        meta: checkpoint.meta.clone(),
    };
    let mut bytes = Vec::with_capacity(w.values.len() * 8);
    for v in &w.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomically(&dir.join(BIN_FILE), &bytes)?;
    write_atomically(&dir.join(INDEX_FILE), serde_json::to_string_pretty(&index)?.as_bytes())?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let index: IndexFile = serde_json::from_str(&std::fs::read_to_string(dir.join(INDEX_FILE))?)?;
    if index.version != 1 {
        return Err(CheckpointError::Version(index.version));
    }
    let bytes = std::fs::read(dir.join(BIN_FILE))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let reader = Reader {
        values,
        tensors: index.tensors,
    };
    let meta = index.meta;
    let (m, n, d) = (meta.num_users, meta.num_elements, meta.model.hidden_dim);

    let mut params = ModelParameters::<T>::zeros(d, n);
    for (name, tensor) in params.named_tensors_mut() {
        *tensor = reader.tensor(&format!("model.{name}"), tensor.shape())?;
    }

    let has_optimizer = reader.tensors.keys().any(|k| k.starts_with("opt.first."));
    let optimizer = if has_optimizer {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (name, tensor) in params.named_tensors() {
            first.push(reader.tensor(&format!("opt.first.{name}"), tensor.shape())?);
            second.push(reader.tensor(&format!("opt.second.{name}"), tensor.shape())?);
        }
        Some(AdamState::restore(first, second, meta.optimizer_step))
    } else {
        None
    };

    let user_values: Vec<T> = reader
        .raw("bank.user_memory")?
        .iter()
        .map(|v| T::from_f64_lossy(*v))
        .collect();
    let element_values: Vec<T> = reader
        .raw("bank.element_memory")?
        .iter()
        .map(|v| T::from_f64_lossy(*v))
        .collect();
    let user_last: Vec<f64> = reader.raw("bank.user_last_time")?.to_vec();
    let element_last: Vec<f64> = reader.raw("bank.element_last_time")?.to_vec();
    let version_meta = reader.raw("bank.version_meta")?.to_vec();
    let version_values = reader.raw("bank.version_values")?.to_vec();
    let mut versions: Vec<Vec<ElementVersion<T>>> = vec![Vec::new(); n];
    for (i, pair) in version_meta.chunks_exact(2).enumerate() {
        let elem = pair[0] as usize;
        let event_idx = pair[1] as usize;
        let values: Vec<T> = version_values[i * d..(i + 1) * d]
            .iter()
            .map(|v| T::from_f64_lossy(*v))
            .collect();
        versions[elem].push(ElementVersion { event_idx, values });
    }
    let bank = MemoryBank::from_parts(d, user_values, user_last, element_values, element_last, versions);

    let mut history = HistoryIndex::new(m);
    let occurrences = reader.raw("history.occurrences")?.to_vec();
    // Occurrence rows are grouped by user in append order; replay them as
    // single-element appends, then overwrite the last-set fields.
    for row in occurrences.chunks_exact(3) {
        let (u, v, t) = (row[0] as u32, row[1] as u32, row[2]);
        history.append(u, &[v], t, 0);
    }
    let last_sets = reader.raw("history.last_sets")?.to_vec();
    let mut per_user: BTreeMap<u32, (Vec<u32>, f64, i64)> = BTreeMap::new();
    for row in last_sets.chunks_exact(4) {
        let entry = per_user
            .entry(row[0] as u32)
            .or_insert_with(|| (Vec::new(), row[2], row[3] as i64));
        entry.0.push(row[1] as u32);
    }
    for (u, (set, t, e)) in per_user {
        history.set_last_event(u, &set, t, if e < 0 { None } else { Some(e as usize) });
    }

    Ok(Checkpoint {
        params,
        optimizer,
        bank,
        history,
        meta,
    })
}
