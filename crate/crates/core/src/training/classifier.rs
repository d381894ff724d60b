use std::collections::BTreeMap;
use std::path::Path;

use cafv_autodiff::{optimizer_step, Bindings, Graph, ParamStore, RngStream, Tensor, UpdateRule};
use log::debug;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::{class_histogram, Dataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::models::{load_checkpoint, save_checkpoint, CheckpointManifest, SoftmaxClassifier};

pub const CLASSIFIER_NAME: &str = "cls";
pub const CLASSIFIER_KIND: &str = "classifier";

#[derive(Serialize, Deserialize)]
struct FitSummary {
    config: TrainConfig,
    train_accuracy: f64,
    class_counts: BTreeMap<i32, usize>,
    epochs: usize,
}

/// A fitted classifier with its parameters and bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedClassifier {
    pub classifier: SoftmaxClassifier,
    pub params: ParamStore,
    pub train_accuracy: f64,
    /// Training records per label.
    pub class_counts: BTreeMap<i32, usize>,
    pub epochs: usize,
}

impl TrainedClassifier {
    pub fn predict(&self, features: &Tensor) -> Result<Vec<i32>> {
        self.classifier.predict(&self.params, features)
    }

    pub fn probabilities(&self, features: &Tensor) -> Result<Tensor> {
        self.classifier.probabilities(&self.params, features)
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<i32>> {
        let idx: Vec<usize> = (0..dataset.len()).collect();
        self.predict(&dataset.feature_matrix(&idx))
    }
}

/// Weights under `dir`; the manifest's hyperparameters hold the config and
/// fit summary.
pub fn save_classifier(dir: &Path, trained: &TrainedClassifier, config: &TrainConfig) -> Result<CheckpointManifest> {
    let summary = FitSummary {
        config: config.clone(),
        train_accuracy: trained.train_accuracy,
        class_counts: trained.class_counts.clone(),
        epochs: trained.epochs,
    };
    let mut m = CheckpointManifest::new(CLASSIFIER_KIND, config.seed, serde_json::to_value(summary)?);
    m.labels = trained.classifier.labels.clone();
    save_checkpoint(dir, &m, &trained.params)
}

pub fn load_classifier(dir: &Path) -> Result<(TrainedClassifier, TrainConfig)> {
    let (m, mut params) = load_checkpoint(dir)?;
    let bad = |message: String| Error::Checkpoint { path: dir.into(), message };
    if m.kind != CLASSIFIER_KIND {
        return Err(bad(format!("expected a {CLASSIFIER_KIND} checkpoint, found {:?}", m.kind)));
    }
    let summary: FitSummary = serde_json::from_value(m.hyperparameters).map_err(|e| bad(e.to_string()))?;
    let w = params.get(&format!("{CLASSIFIER_NAME}.w")).map_err(|_| bad("missing classifier weights".into()))?;
    let d = w.shape()[0];
    let classifier = SoftmaxClassifier::new(CLASSIFIER_NAME, d, &m.labels)?;
    for (name, shape) in [(classifier.param("w"), [d, m.labels.len()]), (classifier.param("b"), [1, m.labels.len()])] {
        match params.get(&name) {
            Ok(v) if v.shape() == shape => {}
            _ => return Err(bad(format!("parameter {name} is missing or not shaped {shape:?}"))),
        }
    }
    params.freeze_all();
    let trained = TrainedClassifier {
        classifier,
        params,
        train_accuracy: summary.train_accuracy,
        class_counts: summary.class_counts,
        epochs: summary.epochs,
    };
    Ok((trained, summary.config))
}

/// Cross-entropy with Adam, minibatches in a fresh shuffle each epoch and the
/// learning rate decayed by `classifier_lr_decay` every
/// `classifier_decay_every` epochs. Weights start at zero.
pub fn pretrain_classifier(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedClassifier> {
    fit(dataset, dataset.labels(), config)
}

/// Fresh classifier on real plus synthetic records, same recipe as
/// [`pretrain_classifier`].
pub fn train_final_classifier(real: &Dataset, synthetic: &[FeatureRecord], config: &TrainConfig) -> Result<TrainedClassifier> {
    if synthetic.is_empty() {
        return pretrain_classifier(real, config);
    }
    let union = real.union(synthetic)?;
    fit(&union, union.labels(), config)
}

fn fit(dataset: &Dataset, labels: &[i32], config: &TrainConfig) -> Result<TrainedClassifier> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot train a classifier on an empty dataset".into()));
    }
    if labels.len() < 2 {
        return Err(Error::Dataset(format!(
            "classifier training needs at least two classes, found {labels:?}"
        )));
    }
    let classifier = SoftmaxClassifier::new(CLASSIFIER_NAME, dataset.feature_dim(), labels)?;
    let k = classifier.num_classes();
    let d = dataset.feature_dim();
    let mut params = ParamStore::new();
    params.insert(classifier.param("w"), Tensor::zeros(&[d, k]), true)?;
    params.insert(classifier.param("b"), Tensor::zeros(&[1, k]), true)?;

    let record_labels: Vec<i32> = dataset.records().iter().map(|r| r.label).collect();
    let mut g = Graph::new();
    let (f, t) = (g.input("f"), g.input("t"));
    let logits = classifier.build(&mut g, f, true);
    let loss = g.softmax_cross_entropy(logits, t);

    let mut rng = RngStream::new(config.seed, "classifier");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..config.classifier_epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let lr = config.classifier_lr_at(epoch);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.classifier_batch_size) {
            let x = dataset.feature_matrix(chunk);
            let y: Vec<i32> = chunk.iter().map(|&i| record_labels[i]).collect();
            let targets = classifier.targets(&y)?;
            g.forward(&Bindings::new().with("f", &x).with("t", &targets), &params)?;
            epoch_loss += g.scalar(loss)? * chunk.len() as f64;
            let grads = g.backward(loss)?;
            optimizer_step(&mut params, &grads, UpdateRule::adam(), lr)?;
        }
        debug!("classifier epoch {epoch}: lr {lr:e}, mean loss {:.6}", epoch_loss / dataset.len() as f64);
    }

    let idx: Vec<usize> = (0..dataset.len()).collect();
    let predicted = classifier.predict(&params, &dataset.feature_matrix(&idx))?;
    let correct = predicted.iter().zip(&record_labels).filter(|(p, t)| p == t).count();
    params.freeze_all();
    Ok(TrainedClassifier {
        classifier,
        params,
        train_accuracy: correct as f64 / dataset.len() as f64,
        class_counts: class_histogram(dataset),
        epochs: config.classifier_epochs,
    })
}
