use cafv_autodiff::{glorot_uniform, Graph, NodeId, ParamStore, RngStream, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signed intensity difference `s_target − s_source` in m/s. Never zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct ContextInterval(i32);

impl ContextInterval {
    pub fn new(delta: i32) -> Result<Self> {
        if delta == 0 {
            return Err(Error::Config("context interval must be non-zero".into()));
        }
        Ok(Self(delta))
    }

    pub fn between(source: i32, target: i32) -> Result<Self> {
        Self::new(target - source)
    }

    pub fn delta(self) -> i32 {
        self.0
    }

    pub fn reverse(self) -> Self {
        Self(-self.0)
    }
}

impl TryFrom<i32> for ContextInterval {
    type Error = Error;

    fn try_from(v: i32) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ContextInterval> for i32 {
    fn from(c: ContextInterval) -> i32 {
        c.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    OneHot,
    LearnedTable,
}

pub const TABLE_PARAM: &str = "emb.table";

/// `E(c)`: maps each allowed interval to a vector, either an indicator or a
/// trainable table row.
///
/// Inside graphs the context enters as a `1 × |intervals|` indicator input;
/// learned mode multiplies it by the table, so the same graph serves every
/// interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEmbedding {
    pub mode: EmbeddingMode,
    pub intervals: Vec<i32>,
    pub dim: usize,
}

impl ContextEmbedding {
    pub fn one_hot(intervals: &[i32]) -> Result<Self> {
        let intervals = Self::check_intervals(intervals)?;
        let dim = intervals.len();
        Ok(Self {
            mode: EmbeddingMode::OneHot,
            intervals,
            dim,
        })
    }

    pub fn learned(intervals: &[i32], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("learned embedding width must be positive".into()));
        }
        Ok(Self {
            mode: EmbeddingMode::LearnedTable,
            intervals: Self::check_intervals(intervals)?,
            dim,
        })
    }

    fn check_intervals(intervals: &[i32]) -> Result<Vec<i32>> {
        let mut v = intervals.to_vec();
        v.sort_unstable();
        v.dedup();
        if v.len() != intervals.len() {
            return Err(Error::Config(format!("interval set {intervals:?} has duplicates")));
        }
        if v.is_empty() || v.contains(&0) {
            return Err(Error::Config(format!("interval set {intervals:?} must be non-empty and exclude 0")));
        }
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, c: ContextInterval) -> bool {
        self.intervals.contains(&c.delta())
    }

    pub fn index_of(&self, c: ContextInterval) -> Result<usize> {
        self.intervals
            .iter()
            .position(|&d| d == c.delta())
            .ok_or_else(|| Error::ContextNotAllowed {
                delta: c.delta(),
                allowed: self.intervals.clone(),
            })
    }

    /// `1 × |intervals|` indicator row for `c`.
    pub fn indicator(&self, c: ContextInterval) -> Result<Tensor> {
        let mut row = vec![0.0; self.intervals.len()];
        row[self.index_of(c)?] = 1.0;
        Ok(Tensor::row(row))
    }

    pub fn embed(&self, store: &ParamStore, c: ContextInterval) -> Result<Vec<f64>> {
        let idx = self.index_of(c)?;
        match self.mode {
            EmbeddingMode::OneHot => Ok(self.indicator(c)?.into_data()),
            EmbeddingMode::LearnedTable => {
                let table = store.get(TABLE_PARAM)?;
                Ok(table.data()[idx * self.dim..(idx + 1) * self.dim].to_vec())
            }
        }
    }

    /// Embedding node from an indicator node.
    pub fn build(&self, g: &mut Graph, indicator: NodeId, train: bool) -> NodeId {
        match self.mode {
            EmbeddingMode::OneHot => indicator,
            EmbeddingMode::LearnedTable => {
                let table = g.param_ref(TABLE_PARAM, train);
                g.matmul(indicator, table)
            }
        }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        if self.mode == EmbeddingMode::LearnedTable {
            let n = self.intervals.len();
            store.insert(TABLE_PARAM, glorot_uniform(rng, &[n, self.dim], n, self.dim), true)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_indicator() {
        let e = ContextEmbedding::one_hot(&[-2, -1, 1, 2]).unwrap();
        let v = e.embed(&ParamStore::new(), ContextInterval::new(1).unwrap()).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn delta_outside_set_rejected() {
        let e = ContextEmbedding::one_hot(&[-2, -1, 1, 2]).unwrap();
        let err = e.embed(&ParamStore::new(), ContextInterval::new(3).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ContextNotAllowed { delta: 3, .. }));
    }

    #[test]
    fn learned_lookup_is_deterministic_and_distinct() {
        let e = ContextEmbedding::learned(&[-1, 1], 4).unwrap();
        let mut store = ParamStore::new();
        e.init_params(&mut store, &mut RngStream::new(1, "init")).unwrap();
        let up = ContextInterval::new(1).unwrap();
        let a = e.embed(&store, up).unwrap();
        let b = e.embed(&store, up).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        assert_ne!(a, e.embed(&store, up.reverse()).unwrap());
        assert_eq!(&store.get(TABLE_PARAM).unwrap().data()[4..8], a.as_slice());
    }

    #[test]
    fn reverse_flips_sign() {
        let c = ContextInterval::between(16, 17).unwrap();
        assert_eq!(c.delta(), 1);
        assert_eq!(c.reverse().delta(), -1);
        assert!(ContextInterval::new(0).is_err());
    }

    #[test]
    fn interval_sets_validated() {
        assert!(ContextEmbedding::one_hot(&[]).is_err());
        assert!(ContextEmbedding::one_hot(&[1, 0]).is_err());
        assert!(ContextEmbedding::one_hot(&[1, 1]).is_err());
    }
}
