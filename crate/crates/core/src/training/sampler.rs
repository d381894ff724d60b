use std::collections::BTreeMap;

use cafv_autodiff::RngStream;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::PairBatch;
use crate::models::ContextInterval;

/// Draws unpaired class-pair batches: a delta uniformly among realizable
/// deltas, a pair `(s, s + delta)` uniformly among pairs realizing it, then
/// independent instance batches from both classes.
#[derive(Clone, Debug)]
pub struct PairSampler {
    by_label: BTreeMap<i32, Vec<usize>>,
    pairs: BTreeMap<i32, Vec<(i32, i32)>>,
}

impl PairSampler {
    pub fn new(dataset: &Dataset, interval_set: &[i32]) -> Result<Self> {
        let by_label = dataset.indices_by_label();
        let mut pairs: BTreeMap<i32, Vec<(i32, i32)>> = BTreeMap::new();
        let mut deltas = interval_set.to_vec();
        deltas.sort_unstable();
        deltas.dedup();
        for &delta in &deltas {
            if delta == 0 {
                continue;
            }
            for &s in by_label.keys() {
                if by_label.contains_key(&(s + delta)) {
                    pairs.entry(delta).or_default().push((s, s + delta));
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::NoRealizablePair(interval_set.to_vec()));
        }
        Ok(Self { by_label, pairs })
    }

    /// Realizable deltas, ascending.
    pub fn deltas(&self) -> Vec<i32> {
        self.pairs.keys().copied().collect()
    }

    pub fn pairs(&self, delta: i32) -> &[(i32, i32)] {
        self.pairs.get(&delta).map_or(&[], Vec::as_slice)
    }

    pub fn sample_pair(&self, rng: &mut RngStream) -> (i32, i32) {
        let deltas: Vec<&Vec<(i32, i32)>> = self.pairs.values().collect();
        let options = deltas[rng.below(deltas.len())];
        options[rng.below(options.len())]
    }

    pub fn sample(&self, dataset: &Dataset, batch_size: usize, rng: &mut RngStream) -> Result<PairBatch> {
        if batch_size == 0 {
            return Err(Error::EmptyBatch);
        }
        let (s_x, s_y) = self.sample_pair(rng);
        let x_idx = draw(&self.by_label[&s_x], batch_size, rng);
        let y_idx = draw(&self.by_label[&s_y], batch_size, rng);
        Ok(PairBatch {
            f_x: dataset.feature_matrix(&x_idx),
            s_x,
            f_y: dataset.feature_matrix(&y_idx),
            s_y,
            context: ContextInterval::between(s_x, s_y)?,
        })
    }
}

/// `n` positions from `pool`: without replacement when the pool is large
/// enough, with replacement otherwise.
fn draw(pool: &[usize], n: usize, rng: &mut RngStream) -> Vec<usize> {
    if pool.len() >= n {
        let mut p = pool.to_vec();
        for i in 0..n {
            let j = i + rng.below(p.len() - i);
            p.swap(i, j);
        }
        p.truncate(n);
        p
    } else {
        (0..n).map(|_| pool[rng.below(pool.len())]).collect()
    }
}

/// One `sample_pair_batch` draw without keeping the sampler around.
pub fn sample_pair_batch(dataset: &Dataset, interval_set: &[i32], batch_size: usize, rng: &mut RngStream) -> Result<PairBatch> {
    PairSampler::new(dataset, interval_set)?.sample(dataset, batch_size, rng)
}
