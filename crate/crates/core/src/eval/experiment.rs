use std::collections::BTreeMap;
use std::fmt::Write as _;

use cafv_autodiff::RngStream;
use log::info;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics_binned, pair_up, MetricsReport};
use super::quality::{pooled, score_synthetic, SynthesisQuality};
use crate::data::{Dataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::training::{pretrain_classifier, synthesize_features, train_final_classifier, train_gan, TrainConfig, TrainedClassifier};

/// Cycle-loss trajectory and finiteness of one GAN run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHealth {
    pub generator_steps: u64,
    /// Mean cycle loss over the first ten recorded steps.
    pub initial_cycle: f64,
    /// Mean cycle loss over the last ten recorded steps.
    pub final_cycle: f64,
    pub all_finite: bool,
    pub min_penalty: f64,
}

impl TrainingHealth {
    pub fn from_history(history: &[LossBreakdown]) -> Option<Self> {
        if history.is_empty() {
            return None;
        }
        let mean = |s: &[LossBreakdown]| s.iter().map(|b| b.cycle).sum::<f64>() / s.len() as f64;
        let k = history.len().min(10);
        Some(Self {
            generator_steps: history.last().map_or(0, |b| b.step),
            initial_cycle: mean(&history[..k]),
            final_cycle: mean(&history[history.len() - k..]),
            all_finite: history.iter().all(LossBreakdown::is_finite),
            min_penalty: history
                .iter()
                .flat_map(|b| [b.penalty_x, b.penalty_y])
                .fold(f64::INFINITY, f64::min),
        })
    }

    pub fn cycle_ratio(&self) -> f64 {
        self.final_cycle / self.initial_cycle
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_hash: String,
    pub synthetic_per_class: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RareClassDelta {
    pub label: i32,
    pub f1_baseline: f64,
    pub f1_augmented: f64,
    pub f1_delta: f64,
    pub mae_baseline: f64,
    pub mae_augmented: f64,
    pub mae_delta: f64,
}

/// Baseline and augmented runs on one test set for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub rare_labels: Vec<i32>,
    pub test_hash: String,
    pub baseline: RunReport,
    pub augmented: RunReport,
    pub rare_deltas: Vec<RareClassDelta>,
    pub rare_macro_f1_baseline: f64,
    pub rare_macro_f1_augmented: f64,
    pub synthesis_quality: Vec<SynthesisQuality>,
    /// Pooled over rare targets: fraction closer to the target prototype.
    pub quality_closer: Option<f64>,
    /// Pooled over rare targets: fraction ranked above the source.
    pub quality_ranked: Option<f64>,
    pub training: Option<TrainingHealth>,
    /// Written separately as JSONL.
    #[serde(skip)]
    pub loss_history: Vec<LossBreakdown>,
    /// Written separately as a feature file.
    #[serde(skip)]
    pub synthetic: Vec<FeatureRecord>,
}

fn evaluate(classifier: &TrainedClassifier, test: &Dataset, bin_width: f64) -> Result<MetricsReport> {
    let predicted = classifier.predict_dataset(test)?;
    let truth: Vec<i32> = test.records().iter().map(|r| r.label).collect();
    compute_metrics_binned(&pair_up(&predicted, &truth)?, bin_width)
}

/// Baseline on real data, then GAN training with the baseline as the frozen
/// classifier, `synthetic_per_class` features per rare label and a fresh
/// classifier on the union. Prototypes, when given, score the synthesis.
pub fn augmentation_experiment(
    train: &Dataset,
    test: &Dataset,
    rare_labels: &[i32],
    config: &TrainConfig,
    prototypes: Option<&BTreeMap<i32, Vec<f64>>>,
) -> Result<ExperimentResult> {
    config.validate()?;
    if rare_labels.is_empty() {
        return Err(Error::Config("no rare labels given".into()));
    }
    for l in rare_labels {
        if !train.labels().contains(l) {
            return Err(Error::UnknownLabel {
                label: *l,
                labels: train.labels().to_vec(),
            });
        }
    }
    if test.is_empty() {
        return Err(Error::Dataset("empty test set".into()));
    }
    let seed = config.seed;
    let w = config.histogram_bin_width;

    info!("seed {seed}: pretraining classifier");
    let baseline_cls = pretrain_classifier(train, config)?;
    let baseline = evaluate(&baseline_cls, test, w)?;

    let (augmented, history, synthetic, quality) = if config.synthetic_per_class == 0 {
        (baseline.clone(), Vec::new(), Vec::new(), Vec::new())
    } else {
        info!("seed {seed}: training GAN");
        let (bundle, history) = train_gan(config, train, &baseline_cls)?;
        let mut rng = RngStream::new(seed, "synthesize");
        let mut synthetic = Vec::new();
        let mut quality = Vec::new();
        for &label in rare_labels {
            let records = synthesize_features(&bundle, train, label, config.synthetic_per_class, &mut rng)?;
            if let Some(p) = prototypes {
                quality.push(score_synthetic(&records, label, p, &baseline_cls)?);
            }
            for mut r in records {
                r.id = synthetic.len() as u64;
                synthetic.push(r);
            }
        }
        info!("seed {seed}: retraining on {} real + {} synthetic", train.len(), synthetic.len());
        let cls = train_final_classifier(train, &synthetic, config)?;
        (evaluate(&cls, test, w)?, history, synthetic, quality)
    };

    let mut sorted_rare = rare_labels.to_vec();
    sorted_rare.sort_unstable();
    sorted_rare.dedup();
    let f1 = |r: &MetricsReport, l: i32| r.per_class.get(&l).map_or(0.0, |c| c.f1);
    let mae = |r: &MetricsReport, l: i32| r.per_class.get(&l).map_or(0.0, |c| c.mae);
    let rare_deltas = sorted_rare
        .iter()
        .map(|&l| RareClassDelta {
            label: l,
            f1_baseline: f1(&baseline, l),
            f1_augmented: f1(&augmented, l),
            f1_delta: f1(&augmented, l) - f1(&baseline, l),
            mae_baseline: mae(&baseline, l),
            mae_augmented: mae(&augmented, l),
            mae_delta: mae(&augmented, l) - mae(&baseline, l),
        })
        .collect();
    let (qa, qb) = if quality.is_empty() {
        (None, None)
    } else {
        let (a, b) = pooled(&quality);
        (Some(a), Some(b))
    };
    let hash = config.hash();
    let run = |metrics: MetricsReport, n: usize| RunReport {
        seed,
        config_hash: hash.clone(),
        synthetic_per_class: n,
        metrics,
    };
    Ok(ExperimentResult {
        seed,
        rare_macro_f1_baseline: baseline.macro_f1_over(&sorted_rare),
        rare_macro_f1_augmented: augmented.macro_f1_over(&sorted_rare),
        rare_labels: sorted_rare,
        test_hash: test.content_hash(),
        baseline: run(baseline, 0),
        augmented: run(augmented, config.synthetic_per_class),
        rare_deltas,
        synthesis_quality: quality,
        quality_closer: qa,
        quality_ranked: qb,
        training: TrainingHealth::from_history(&history),
        loss_history: history,
        synthetic,
    })
}

/// Middle value; mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Medians across seeds of the headline numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seeds: Vec<u64>,
    pub rare_labels: Vec<i32>,
    pub config_hash: String,
    pub median_rare_macro_f1_baseline: f64,
    pub median_rare_macro_f1_augmented: f64,
    pub median_macro_f1_baseline: f64,
    pub median_macro_f1_augmented: f64,
    pub median_mae_baseline: f64,
    pub median_mae_augmented: f64,
    pub median_quality_closer: Option<f64>,
    pub median_quality_ranked: Option<f64>,
    pub median_cycle_ratio: Option<f64>,
    pub all_losses_finite: bool,
}

impl ExperimentSummary {
    pub fn from_results(results: &[ExperimentResult]) -> Result<Self> {
        let first = results.first().ok_or_else(|| Error::Config("no experiment results".into()))?;
        let med = |f: &dyn Fn(&ExperimentResult) -> f64| median(&results.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0);
        let opt = |f: &dyn Fn(&ExperimentResult) -> Option<f64>| {
            let v: Option<Vec<f64>> = results.iter().map(f).collect();
            v.and_then(|v| median(&v))
        };
        Ok(Self {
            seeds: results.iter().map(|r| r.seed).collect(),
            rare_labels: first.rare_labels.clone(),
            config_hash: first.augmented.config_hash.clone(),
            median_rare_macro_f1_baseline: med(&|r| r.rare_macro_f1_baseline),
            median_rare_macro_f1_augmented: med(&|r| r.rare_macro_f1_augmented),
            median_macro_f1_baseline: med(&|r| r.baseline.metrics.macro_f1),
            median_macro_f1_augmented: med(&|r| r.augmented.metrics.macro_f1),
            median_mae_baseline: med(&|r| r.baseline.metrics.mae),
            median_mae_augmented: med(&|r| r.augmented.metrics.mae),
            median_quality_closer: opt(&|r| r.quality_closer),
            median_quality_ranked: opt(&|r| r.quality_ranked),
            median_cycle_ratio: opt(&|r| r.training.as_ref().map(TrainingHealth::cycle_ratio)),
            all_losses_finite: results
                .iter()
                .all(|r| r.training.as_ref().is_none_or(|t| t.all_finite)),
        })
    }
}

/// `method,metric,<class>…,all` rows for f1, MAE and RMSE of both runs.
pub fn table_csv(result: &ExperimentResult) -> String {
    let labels: Vec<i32> = result.baseline.metrics.per_class.keys().copied().collect();
    let mut s = String::from("method,metric");
    for l in &labels {
        let _ = write!(s, ",{l}");
    }
    s.push_str(",all\n");
    for (method, report) in [("baseline", &result.baseline.metrics), ("augmented", &result.augmented.metrics)] {
        for metric in ["f1", "mae", "rmse"] {
            let _ = write!(s, "{method},{metric}");
            for l in &labels {
                let c = report.per_class.get(l);
                let v = match metric {
                    "f1" => c.map_or(0.0, |c| c.f1),
                    "mae" => c.map_or(0.0, |c| c.mae),
                    _ => c.map_or(0.0, |c| c.rmse),
                };
                let _ = write!(s, ",{v}");
            }
            let all = match metric {
                "f1" => report.macro_f1,
                "mae" => report.mae,
                _ => report.rmse,
            };
            let _ = writeln!(s, ",{all}");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn health_from_history() {
        let w = crate::losses::LossWeights::default();
        let h: Vec<LossBreakdown> = (1..=30)
            .map(|s| LossBreakdown::new(s, &w, 0.0, 0.0, if s <= 10 { 2.0 } else { 0.5 }, 0.0, 0.0, 0.1, 0.2))
            .collect();
        let t = TrainingHealth::from_history(&h).unwrap();
        assert_eq!((t.initial_cycle, t.final_cycle), (2.0, 0.5));
        assert_eq!(t.cycle_ratio(), 0.25);
        assert_eq!(t.min_penalty, 0.1);
        assert!(t.all_finite);
    }
}
