//! Synthetic benchmark with a known, interval-stationary evolution feature.
//!
//! Class `k` (0-based) has prototype `μ_k = relu(μ₀ + k·δ)`; samples are
//! `relu(μ_k + ε)` with `ε ~ N(0, σ²I)`. The pre-relu difference between
//! adjacent prototypes is exactly `δ` for every `k`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cafv_autodiff::RngStream;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureRecord, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Intensity of class 0 in m/s; class `k` is `base_label + k·label_step`.
    pub base_label: i32,
    pub label_step: i32,
    pub sigma: f64,
    /// Records per class before the train/test split.
    pub counts: Vec<usize>,
    pub test_fraction: f64,
    pub seed: u64,
    /// First prototype; drawn uniform in [0.5, 1.5] when absent.
    pub base_prototype: Option<Vec<f64>>,
    /// Per-unit-interval drift; drawn uniform in [−0.2, 0.2] with a quarter
    /// of the entries zeroed when absent.
    pub drift: Option<Vec<f64>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let mut counts = vec![500; 6];
        counts.extend([6, 6, 6]);
        Self {
            num_classes: 9,
            feature_dim: 16,
            base_label: 10,
            label_step: 1,
            sigma: 0.1,
            counts,
            test_fraction: 0.2,
            seed: 7,
            base_prototype: None,
            drift: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be ≥ 2, got {}", self.num_classes));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.counts.len() != self.num_classes {
            return bad(format!("{} counts for {} classes", self.counts.len(), self.num_classes));
        }
        if self.counts.contains(&0) {
            return bad("every class needs at least one record".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction must be in [0, 1), got {}", self.test_fraction));
        }
        if self.label_step <= 0 || self.base_label < 0 {
            return bad("labels must be non-negative and increasing".into());
        }
        for (name, v) in [("base_prototype", &self.base_prototype), ("drift", &self.drift)] {
            if let Some(v) = v {
                if v.len() != self.feature_dim {
                    return bad(format!("{name} has {} entries, expected {}", v.len(), self.feature_dim));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self, class: usize) -> i32 {
        self.base_label + class as i32 * self.label_step
    }

    pub fn labels(&self) -> Vec<i32> {
        (0..self.num_classes).map(|k| self.label(k)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: Dataset,
    pub test: Dataset,
    /// Ground-truth class prototypes keyed by label.
    pub prototypes: BTreeMap<i32, Vec<f64>>,
    /// `μ₀ + k·δ` before the relu, keyed by label.
    pub pre_relu_prototypes: BTreeMap<i32, Vec<f64>>,
    pub drift: Vec<f64>,
}

pub fn make_synthetic_benchmark(spec: &SyntheticSpec) -> Result<Benchmark> {
    spec.validate()?;
    let d = spec.feature_dim;
    let mut rng = RngStream::new(spec.seed, "data");
    let base = match &spec.base_prototype {
        Some(v) => v.clone(),
        None => (0..d).map(|_| rng.uniform_range(0.5, 1.5)).collect(),
    };
    let drift = match &spec.drift {
        Some(v) => v.clone(),
        None => (0..d)
            .map(|_| {
                let v = rng.uniform_range(-0.2, 0.2);
                if rng.uniform() < 0.25 {
                    0.0
                } else {
                    v
                }
            })
            .collect(),
    };

    let mut prototypes = BTreeMap::new();
    let mut pre_relu = BTreeMap::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, &count) in spec.counts.iter().enumerate() {
        let label = spec.label(k);
        let raw: Vec<f64> = base.iter().zip(&drift).map(|(b, dl)| b + k as f64 * dl).collect();
        let proto: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
        let mut samples: Vec<Vec<f64>> = (0..count)
            .map(|_| proto.iter().map(|m| (m + spec.sigma * rng.normal()).max(0.0)).collect())
            .collect();
        // Stratified split: rows are i.i.d., so a shuffle of positions is
        // all that decides membership.
        let n_test = test_count(count, spec.test_fraction);
        for i in (1..samples.len()).rev() {
            let j = rng.below(i + 1);
            samples.swap(i, j);
        }
        for (i, s) in samples.into_iter().enumerate() {
            if i < n_test {
                test.push(FeatureRecord::real(test.len() as u64, label, s));
            } else {
                train.push(FeatureRecord::real(train.len() as u64, label, s));
            }
        }
        prototypes.insert(label, proto);
        pre_relu.insert(label, raw);
    }
    Ok(Benchmark {
        train: Dataset::new(train, d, Split::Train)?,
        test: Dataset::new(test, d, Split::Test)?,
        prototypes,
        pre_relu_prototypes: pre_relu,
        drift,
    })
}

/// Test share of a class of `n`: rounded fraction, at least one whenever the
/// class has two or more records.
fn test_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// `label,f0,…` CSV of prototypes at full `f64` precision.
pub fn save_prototypes(prototypes: &BTreeMap<i32, Vec<f64>>, path: &Path) -> Result<()> {
    let d = prototypes.values().next().map_or(0, Vec::len);
    let mut out = String::from("label");
    for i in 0..d {
        let _ = write!(out, ",f{i}");
    }
    out.push('\n');
    for (label, p) in prototypes {
        let _ = write!(out, "{label}");
        for v in p {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_prototypes(path: &Path) -> Result<BTreeMap<i32, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let err = |m: &str| Error::Csv {
            path: path.into(),
            line: i + 1,
            message: m.to_string(),
        };
        let mut cells = line.split(',');
        let label: i32 = cells
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| err("bad label"))?;
        let values: Vec<f64> = cells
            .map(|c| c.parse::<f64>().map_err(|_| err("bad number")))
            .collect::<Result<_>>()?;
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(err("ragged row"));
        }
        out.insert(label, values);
    }
    Ok(out)
}
