use cafv_autodiff::{glorot_uniform, softmax, Bindings, Graph, NodeId, ParamStore, RngStream, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear softmax classifier over a sorted label set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxClassifier {
    pub name: String,
    pub feature_dim: usize,
    /// Sorted, distinct intensity labels; column `k` of the weight is `labels[k]`.
    pub labels: Vec<i32>,
}

impl SoftmaxClassifier {
    pub fn new(name: impl Into<String>, feature_dim: usize, labels: &[i32]) -> Result<Self> {
        let mut sorted = labels.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() < 2 || sorted.len() != labels.len() {
            return Err(Error::Config(format!(
                "classifier needs at least two distinct labels, got {labels:?}"
            )));
        }
        Ok(Self {
            name: name.into(),
            feature_dim,
            labels: sorted,
        })
    }

    pub fn param(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.name)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        let (d, k) = (self.feature_dim, self.num_classes());
        store.insert(self.param("w"), glorot_uniform(rng, &[d, k], d, k), true)?;
        store.insert(self.param("b"), Tensor::zeros(&[1, k]), true)?;
        Ok(())
    }

    pub fn label_index(&self, label: i32) -> Result<usize> {
        self.labels.binary_search(&label).map_err(|_| Error::UnknownLabel {
            label,
            labels: self.labels.clone(),
        })
    }

    /// `B × K` one-hot rows for `labels`.
    pub fn targets(&self, labels: &[i32]) -> Result<Tensor> {
        let k = self.num_classes();
        let mut data = vec![0.0; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            data[i * k + self.label_index(l)?] = 1.0;
        }
        Ok(Tensor::matrix(labels.len(), k, data)?)
    }

    /// Logit node (`B × K`).
    pub fn build(&self, g: &mut Graph, f: NodeId, train: bool) -> NodeId {
        let w = g.param_ref(&self.param("w"), train);
        let b = g.param_ref(&self.param("b"), train);
        let logits = g.matmul(f, w);
        g.add(logits, b)
    }

    pub fn logits(&self, store: &ParamStore, f: &Tensor) -> Result<Tensor> {
        if f.cols() != self.feature_dim {
            return Err(Error::Dimension(format!(
                "classifier {} expects B×{}, got {:?}",
                self.name,
                self.feature_dim,
                f.shape()
            )));
        }
        let mut g = Graph::new();
        let fi = g.input("f");
        let out = self.build(&mut g, fi, false);
        g.forward(&Bindings::new().with("f", f), store)?;
        Ok(g.value(out)?.clone())
    }

    /// Per-row class probabilities, columns ordered as `labels`.
    pub fn probabilities(&self, store: &ParamStore, f: &Tensor) -> Result<Tensor> {
        let logits = self.logits(store, f)?;
        let k = self.num_classes();
        let mut data = Vec::with_capacity(logits.len());
        for r in 0..logits.rows() {
            data.extend(softmax(logits.row_slice(r)));
        }
        Ok(Tensor::matrix(logits.rows(), k, data)?)
    }

    pub fn predict(&self, store: &ParamStore, f: &Tensor) -> Result<Vec<i32>> {
        let logits = self.logits(store, f)?;
        Ok((0..logits.rows())
            .map(|r| self.labels[argmax(logits.row_slice(r))])
            .collect())
    }
}

/// Index of the largest entry; the first one wins ties, which with sorted
/// labels means the smallest label.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
