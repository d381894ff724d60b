//! Generators, critics, the context embedding and the softmax classifier,
//! all expressed as graph builders over one shared parameter store.

pub mod checkpoint;
pub mod classifier;
pub mod context;
pub mod critic;
pub mod generator;

use cafv_autodiff::{ParamStore, RngStream};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_FORMAT_VERSION};
pub use classifier::{argmax, SoftmaxClassifier};
pub use context::{ContextEmbedding, ContextInterval, EmbeddingMode, TABLE_PARAM};
pub use critic::{Critic, CriticNodes};
pub use generator::{context_weight, Generator};

use crate::error::Result;

/// Layer widths shared by every network in a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub noise_dim: usize,
    pub generator_hidden: usize,
    pub critic_hidden: usize,
    pub leaky_slope: f64,
}

/// `G_{X→Y}`, `G_{Y→X}`, `D_X`, `D_Y` and `E(·)` with their parameters.
///
/// `D_Y` judges translated features (the target side of `G_{X→Y}`) under
/// `c`, `D_X` judges the reverse translations under `reverse(c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub dims: ModelDims,
    pub embedding: ContextEmbedding,
    pub g_xy: Generator,
    pub g_yx: Generator,
    pub d_x: Critic,
    pub d_y: Critic,
    /// Pretrained classifier whose parameters sit frozen in `params`.
    pub classifier: Option<SoftmaxClassifier>,
    pub params: ParamStore,
}

impl ModelBundle {
    pub fn architecture(dims: ModelDims, embedding: ContextEmbedding) -> Self {
        let e = embedding.dim();
        let generator = |name: &str| Generator {
            name: name.into(),
            feature_dim: dims.feature_dim,
            noise_dim: dims.noise_dim,
            hidden: dims.generator_hidden,
            context_dim: e,
            slope: dims.leaky_slope,
        };
        let critic = |name: &str| Critic {
            name: name.into(),
            feature_dim: dims.feature_dim,
            context_dim: e,
            hidden: dims.critic_hidden,
            slope: dims.leaky_slope,
        };
        Self {
            dims,
            g_xy: generator("g_xy"),
            g_yx: generator("g_yx"),
            d_x: critic("d_x"),
            d_y: critic("d_y"),
            embedding,
            classifier: None,
            params: ParamStore::new(),
        }
    }

    /// Fresh bundle; all initial weights come from `rng`.
    pub fn init(dims: ModelDims, embedding: ContextEmbedding, rng: &mut RngStream) -> Result<Self> {
        let mut b = Self::architecture(dims, embedding);
        b.embedding.init_params(&mut b.params, rng)?;
        b.g_xy.init_params(&mut b.params, rng)?;
        b.g_yx.init_params(&mut b.params, rng)?;
        b.d_x.init_params(&mut b.params, rng)?;
        b.d_y.init_params(&mut b.params, rng)?;
        Ok(b)
    }

    /// Copy the classifier's parameters into the bundle, frozen.
    pub fn attach_classifier(&mut self, classifier: &SoftmaxClassifier, store: &ParamStore) -> Result<()> {
        if classifier.feature_dim != self.dims.feature_dim {
            return Err(crate::Error::Dimension(format!(
                "classifier expects {} features, bundle produces {}",
                classifier.feature_dim, self.dims.feature_dim
            )));
        }
        for suffix in ["w", "b"] {
            let name = classifier.param(suffix);
            if self.params.contains(&name) {
                self.params.set(&name, store.get(&name)?.clone())?;
            } else {
                self.params.insert(name.clone(), store.get(&name)?.clone(), false)?;
            }
            self.params.set_trainable(&name, false)?;
        }
        self.classifier = Some(classifier.clone());
        Ok(())
    }

    /// Parameter names updated by the generator step: both generators and
    /// the learned embedding table.
    pub fn generator_params(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| n.starts_with("g_xy.") || n.starts_with("g_yx.") || *n == TABLE_PARAM)
            .map(String::from)
            .collect()
    }

    pub fn critic_params(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| n.starts_with("d_x.") || n.starts_with("d_y."))
            .map(String::from)
            .collect()
    }
}
