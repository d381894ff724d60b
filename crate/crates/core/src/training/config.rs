use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::hex_digest;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::{ContextEmbedding, EmbeddingMode, ModelDims};

/// Every knob of the pipeline. JSON configs may omit keys (defaults apply)
/// but may not add unknown ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub feature_dim: usize,
    pub noise_dim: usize,
    /// Allowed signed intensity differences between source and target.
    pub interval_set: Vec<i32>,
    pub batch_size: usize,
    pub generator_lr: f64,
    pub critic_lr: f64,
    pub n_critic: usize,
    /// One epoch is ⌈N_train / batch_size⌉ generator steps.
    pub gan_epochs: usize,
    /// Caps the generator steps implied by `gan_epochs` when set.
    pub max_generator_steps: Option<u64>,
    pub classifier_lr: f64,
    pub classifier_lr_decay: f64,
    pub classifier_decay_every: usize,
    pub classifier_epochs: usize,
    pub classifier_batch_size: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub embedding: EmbeddingMode,
    /// Width of the learned table; one-hot width is `|interval_set|`.
    pub embedding_dim: usize,
    pub generator_hidden: usize,
    pub critic_hidden: usize,
    pub leaky_slope: f64,
    /// Synthetic records per rare class in the augmentation experiment.
    pub synthetic_per_class: usize,
    pub histogram_bin_width: f64,
    /// Loss-history logging interval in generator steps.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            feature_dim: 512,
            noise_dim: 128,
            interval_set: vec![-1, 1],
            batch_size: 64,
            generator_lr: 1e-4,
            critic_lr: 1e-4,
            n_critic: 5,
            gan_epochs: 10,
            max_generator_steps: None,
            classifier_lr: 1e-4,
            classifier_lr_decay: 0.9,
            classifier_decay_every: 10,
            classifier_epochs: 100,
            classifier_batch_size: 64,
            seed: 0,
            loss_weights: LossWeights::default(),
            embedding: EmbeddingMode::OneHot,
            embedding_dim: 16,
            generator_hidden: 4096,
            critic_hidden: 4096,
            leaky_slope: 0.2,
            synthetic_per_class: 200,
            histogram_bin_width: 1.0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        hex_digest(h)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let positive = [
            ("feature_dim", self.feature_dim),
            ("noise_dim", self.noise_dim),
            ("batch_size", self.batch_size),
            ("n_critic", self.n_critic),
            ("classifier_batch_size", self.classifier_batch_size),
            ("classifier_decay_every", self.classifier_decay_every),
            ("generator_hidden", self.generator_hidden),
            ("critic_hidden", self.critic_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let rates = [
            ("generator_lr", self.generator_lr),
            ("critic_lr", self.critic_lr),
            ("classifier_lr", self.classifier_lr),
            ("histogram_bin_width", self.histogram_bin_width),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.classifier_lr_decay > 0.0 && self.classifier_lr_decay <= 1.0) {
            return bad(format!("classifier_lr_decay must be in (0, 1], got {}", self.classifier_lr_decay));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope must be in [0, 1), got {}", self.leaky_slope));
        }
        if self.embedding == EmbeddingMode::LearnedTable && self.embedding_dim == 0 {
            return bad("embedding_dim must be positive for a learned table".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        self.loss_weights.validate()?;
        ContextEmbedding::one_hot(&self.interval_set)?;
        for &d in &self.interval_set {
            if !self.interval_set.contains(&-d) {
                return bad(format!("interval_set {:?} is not symmetric: {d} has no {}", self.interval_set, -d));
            }
        }
        Ok(())
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            feature_dim: self.feature_dim,
            noise_dim: self.noise_dim,
            generator_hidden: self.generator_hidden,
            critic_hidden: self.critic_hidden,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn context_embedding(&self) -> Result<ContextEmbedding> {
        match self.embedding {
            EmbeddingMode::OneHot => ContextEmbedding::one_hot(&self.interval_set),
            EmbeddingMode::LearnedTable => ContextEmbedding::learned(&self.interval_set, self.embedding_dim),
        }
    }

    /// `classifier_lr · decay^⌊epoch / decay_every⌋`.
    pub fn classifier_lr_at(&self, epoch: usize) -> f64 {
        self.classifier_lr * self.classifier_lr_decay.powi((epoch / self.classifier_decay_every) as i32)
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> u64 {
        train_len.div_ceil(self.batch_size) as u64
    }

    pub fn total_generator_steps(&self, train_len: usize) -> u64 {
        let from_epochs = self.gan_epochs as u64 * self.steps_per_epoch(train_len);
        match self.max_generator_steps {
            Some(cap) => from_epochs.min(cap),
            None => from_epochs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_published_constants() {
        let c = TrainConfig::default();
        assert_eq!(c.noise_dim, 128);
        assert_eq!(c.critic_hidden, 4096);
        assert_eq!(c.classifier_lr, 1e-4);
        assert_eq!(c.classifier_lr_decay, 0.9);
        assert_eq!(c.classifier_decay_every, 10);
        assert_eq!(c.loss_weights, LossWeights { lambda1: 10.0, lambda2: 10.0, beta: 0.001 });
        c.validate().unwrap();
    }

    #[test]
    fn lr_schedule_steps_every_ten_epochs() {
        let c = TrainConfig::default();
        for e in 0..10 {
            assert_eq!(c.classifier_lr_at(e), 1e-4);
        }
        for e in 10..20 {
            assert!((c.classifier_lr_at(e) - 9e-5).abs() < 1e-18);
        }
    }

    #[test]
    fn json_roundtrip_and_unknown_keys() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let partial = TrainConfig::from_json(r#"{"feature_dim": 16, "seed": 3}"#).unwrap();
        assert_eq!(partial.feature_dim, 16);
        assert_eq!(partial.noise_dim, 128);
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            r#"{"interval_set": [1]}"#,
            r#"{"interval_set": [0, 1, -1]}"#,
            r#"{"n_critic": 0}"#,
            r#"{"generator_lr": -1.0}"#,
            r#"{"loss_weights": {"lambda1": -1.0}}"#,
            r#"{"classifier_lr_decay": 1.5}"#,
        ] {
            assert!(TrainConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn epoch_arithmetic() {
        let c = TrainConfig {
            batch_size: 64,
            gan_epochs: 3,
            max_generator_steps: Some(100),
            ..TrainConfig::default()
        };
        assert_eq!(c.steps_per_epoch(2415), 38);
        assert_eq!(c.total_generator_steps(2415), 100);
        assert_eq!(TrainConfig { max_generator_steps: None, ..c }.total_generator_steps(2415), 114);
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
