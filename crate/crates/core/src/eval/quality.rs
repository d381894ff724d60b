use std::collections::BTreeMap;

use cafv_autodiff::{RngStream, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureRecord, Provenance};
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::training::{synthesize_features, TrainedClassifier};

/// How synthesized features for one target relate to the oracle
/// prototypes and to the pretrained classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisQuality {
    pub target: i32,
    pub count: usize,
    /// Records closer (L2) to the target prototype than to their source's.
    pub closer_to_target: usize,
    /// Records the classifier scores higher for the target than the source.
    pub ranked_above_source: usize,
    pub fraction_closer: f64,
    pub fraction_ranked: f64,
    /// Records per source label.
    pub sources: BTreeMap<i32, usize>,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Score already-synthesized records.
pub fn score_synthetic(
    records: &[FeatureRecord],
    target: i32,
    prototypes: &BTreeMap<i32, Vec<f64>>,
    classifier: &TrainedClassifier,
) -> Result<SynthesisQuality> {
    let missing = |l: i32| Error::Dataset(format!("no oracle prototype for label {l}"));
    let mu_t = prototypes.get(&target).ok_or_else(|| missing(target))?;
    let cls = &classifier.classifier;
    let t_idx = cls.label_index(target)?;
    let rows: Vec<&[f64]> = records.iter().map(|r| r.features.as_slice()).collect();
    let probs = if rows.is_empty() {
        None
    } else {
        Some(classifier.probabilities(&Tensor::from_rows(&rows)?)?)
    };
    let (mut closer, mut ranked) = (0, 0);
    let mut sources = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let delta = match r.provenance {
            Provenance::Synthetic { delta, .. } => delta,
            Provenance::Real => return Err(Error::Dataset(format!("record {} is not synthetic", r.id))),
        };
        let source = target - delta;
        *sources.entry(source).or_insert(0) += 1;
        let mu_s = prototypes.get(&source).ok_or_else(|| missing(source))?;
        if l2(&r.features, mu_t) < l2(&r.features, mu_s) {
            closer += 1;
        }
        let p = probs.as_ref().expect("non-empty").row_slice(i);
        if p[t_idx] > p[cls.label_index(source)?] {
            ranked += 1;
        }
    }
    let n = records.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(SynthesisQuality {
        target,
        count: n,
        closer_to_target: closer,
        ranked_above_source: ranked,
        fraction_closer: frac(closer),
        fraction_ranked: frac(ranked),
        sources,
    })
}

/// Synthesize `n` features for `target` and score them.
pub fn synthesis_quality(
    bundle: &ModelBundle,
    dataset: &Dataset,
    prototypes: &BTreeMap<i32, Vec<f64>>,
    target: i32,
    n: usize,
    classifier: &TrainedClassifier,
    rng: &mut RngStream,
) -> Result<SynthesisQuality> {
    if !prototypes.contains_key(&target) {
        return Err(Error::Dataset(format!("no oracle prototype for label {target}")));
    }
    let records = synthesize_features(bundle, dataset, target, n, rng)?;
    score_synthetic(&records, target, prototypes, classifier)
}

/// Counts summed over several targets.
pub fn pooled(qualities: &[SynthesisQuality]) -> (f64, f64) {
    let n: usize = qualities.iter().map(|q| q.count).sum();
    if n == 0 {
        return (0.0, 0.0);
    }
    let a: usize = qualities.iter().map(|q| q.closer_to_target).sum();
    let b: usize = qualities.iter().map(|q| q.ranked_above_source).sum();
    (a as f64 / n as f64, b as f64 / n as f64)
}
