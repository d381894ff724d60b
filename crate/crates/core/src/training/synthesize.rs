use std::collections::BTreeMap;

use cafv_autodiff::{RngStream, Tensor};

use crate::data::{Dataset, FeatureRecord, Provenance};
use crate::error::{Error, Result};
use crate::models::{ContextInterval, ModelBundle};

/// Source classes `s` present in `dataset` with `target − s` in the
/// bundle's interval set, ascending.
pub fn admissible_sources(bundle: &ModelBundle, dataset: &Dataset, target: i32) -> Vec<i32> {
    dataset
        .labels()
        .iter()
        .copied()
        .filter(|&s| s != target && bundle.embedding.intervals.contains(&(target - s)))
        .collect()
}

/// `count` synthetic features for `target`. Each record picks its source
/// class uniformly among admissible ones, a source instance uniformly
/// within it and fresh noise, then runs `G_{X→Y}` under `c = target − s`.
pub fn synthesize_features(
    bundle: &ModelBundle,
    dataset: &Dataset,
    target: i32,
    count: usize,
    rng: &mut RngStream,
) -> Result<Vec<FeatureRecord>> {
    if count == 0 {
        return Err(Error::Config("synthetic count must be positive".into()));
    }
    if dataset.feature_dim() != bundle.dims.feature_dim {
        return Err(Error::Dimension(format!(
            "bundle expects {} features, dataset has {}",
            bundle.dims.feature_dim,
            dataset.feature_dim()
        )));
    }
    let sources = admissible_sources(bundle, dataset, target);
    if sources.is_empty() {
        return Err(Error::NoAdmissibleSource {
            target,
            intervals: bundle.embedding.intervals.clone(),
        });
    }
    let by_label = dataset.indices_by_label();

    let mut picks = Vec::with_capacity(count);
    let mut noise = Vec::with_capacity(count * bundle.dims.noise_dim);
    for _ in 0..count {
        let s = sources[rng.below(sources.len())];
        let pool = &by_label[&s];
        picks.push((s, pool[rng.below(pool.len())]));
        for _ in 0..bundle.dims.noise_dim {
            noise.push(rng.normal());
        }
    }

    let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &(s, _)) in picks.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let records = dataset.records();
    let dz = bundle.dims.noise_dim;
    let mut out: Vec<Option<FeatureRecord>> = vec![None; count];
    for (s, rows) in groups {
        let c = ContextInterval::between(s, target)?;
        let e = Tensor::row(bundle.embedding.embed(&bundle.params, c)?);
        let idx: Vec<usize> = rows.iter().map(|&i| picks[i].1).collect();
        let f = dataset.feature_matrix(&idx);
        let z_data: Vec<f64> = rows.iter().flat_map(|&i| noise[i * dz..(i + 1) * dz].iter().copied()).collect();
        let z = Tensor::matrix(rows.len(), dz, z_data)?;
        let fake = bundle.g_xy.forward(&bundle.params, &f, &z, &e)?;
        for (k, &i) in rows.iter().enumerate() {
            let src = &records[picks[i].1];
            out[i] = Some(FeatureRecord {
                id: i as u64,
                features: fake.row_slice(k).to_vec(),
                label: target,
                provenance: Provenance::Synthetic {
                    source_id: src.id,
                    delta: c.delta(),
                },
            });
        }
    }
    Ok(out.into_iter().map(|r| r.expect("every pick is generated")).collect())
}

/// Synthesize for several targets in order, renumbering ids consecutively.
pub fn synthesize_for_targets(
    bundle: &ModelBundle,
    dataset: &Dataset,
    targets: &[i32],
    count: usize,
    rng: &mut RngStream,
) -> Result<Vec<FeatureRecord>> {
    let mut out = Vec::with_capacity(targets.len() * count);
    for &t in targets {
        for mut r in synthesize_features(bundle, dataset, t, count, rng)? {
            r.id = out.len() as u64;
            out.push(r);
        }
    }
    Ok(out)
}
