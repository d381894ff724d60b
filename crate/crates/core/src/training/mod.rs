//! Classifier pretraining, class-pair sampling, the alternating GAN loop
//! with checkpoint/resume, feature synthesis and the final classifier.

mod classifier;
mod config;
mod gan;
mod sampler;
mod synthesize;

pub use classifier::{
    load_classifier, pretrain_classifier, save_classifier, train_final_classifier, TrainedClassifier, CLASSIFIER_KIND,
    CLASSIFIER_NAME,
};
pub use config::TrainConfig;
pub use gan::{checkpoint_kind, load_bundle, save_bundle, train_gan, GanTrainer, TrainerState, GAN_KIND, STATE_FILE};
pub use sampler::{sample_pair_batch, PairSampler};
pub use synthesize::{admissible_sources, synthesize_features, synthesize_for_targets};
