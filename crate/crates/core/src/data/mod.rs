//! Feature records, datasets, file formats and the synthetic benchmark.

mod io;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use cafv_autodiff::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{histogram_csv, load_features, save_features, FeatureFormat};
pub use synthetic::{load_prototypes, make_synthetic_benchmark, save_prototypes, Benchmark, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Real,
    Synthetic { source_id: u64, delta: i32 },
}

/// One feature vector and its intensity label (m/s).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: i32,
    pub provenance: Provenance,
}

impl FeatureRecord {
    pub fn real(id: u64, label: i32, features: Vec<f64>) -> Self {
        Self {
            id,
            features,
            label,
            provenance: Provenance::Real,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Records sharing one feature dimension. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<FeatureRecord>,
    feature_dim: usize,
    labels: Vec<i32>,
    split: Split,
}

impl Dataset {
    pub fn new(records: Vec<FeatureRecord>, feature_dim: usize, split: Split) -> Result<Self> {
        let mut ids = HashSet::with_capacity(records.len());
        let mut labels = BTreeSet::new();
        for r in &records {
            if r.features.len() != feature_dim {
                return Err(Error::Dataset(format!(
                    "record {} has {} features, expected {feature_dim}",
                    r.id,
                    r.features.len()
                )));
            }
            if r.label < 0 {
                return Err(Error::Dataset(format!("record {} has negative label {}", r.id, r.label)));
            }
            if !ids.insert(r.id) {
                return Err(Error::Dataset(format!("duplicate record id {}", r.id)));
            }
            labels.insert(r.label);
        }
        Ok(Self {
            records,
            feature_dim,
            labels: labels.into_iter().collect(),
            split,
        })
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Sorted distinct labels.
    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record positions per label, in record order.
    pub fn indices_by_label(&self) -> BTreeMap<i32, Vec<usize>> {
        let mut out: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            out.entry(r.label).or_default().push(i);
        }
        out
    }

    /// Feature rows of the given record positions as a matrix.
    pub fn feature_matrix(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            data.extend_from_slice(&self.records[i].features);
        }
        Tensor::matrix(indices.len(), self.feature_dim, data).expect("rows share feature_dim")
    }

    /// Real records followed by `extra`, renumbered `0..n` so ids stay unique.
    pub fn union(&self, extra: &[FeatureRecord]) -> Result<Dataset> {
        let records = self
            .records
            .iter()
            .chain(extra)
            .enumerate()
            .map(|(i, r)| FeatureRecord {
                id: i as u64,
                ..r.clone()
            })
            .collect();
        Dataset::new(records, self.feature_dim, self.split)
    }

    /// SHA-256 over ids, labels, provenance and exact feature bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.feature_dim as u64).to_le_bytes());
        for r in &self.records {
            h.update(r.id.to_le_bytes());
            h.update(r.label.to_le_bytes());
            match r.provenance {
                Provenance::Real => h.update([0u8]),
                Provenance::Synthetic { source_id, delta } => {
                    h.update([1u8]);
                    h.update(source_id.to_le_bytes());
                    h.update(delta.to_le_bytes());
                }
            }
            for v in &r.features {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Exact record count per label, sorted by label.
pub fn class_histogram(dataset: &Dataset) -> BTreeMap<i32, usize> {
    let mut out = BTreeMap::new();
    for r in dataset.records() {
        *out.entry(r.label).or_insert(0) += 1;
    }
    out
}
