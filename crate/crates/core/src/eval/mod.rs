//! Classification metrics, error histograms, synthesis-quality oracles and
//! the baseline-versus-augmented experiment.

mod experiment;
mod metrics;
mod quality;

pub use experiment::{
    augmentation_experiment, median, table_csv, ExperimentResult, ExperimentSummary, RareClassDelta, RunReport,
    TrainingHealth,
};
pub use metrics::{
    compute_metrics, compute_metrics_binned, error_histogram, f1_score, histogram, histogram_to_csv, pair_up,
    ClassMetrics, ConfusionMatrix, HistogramBin, MetricsReport, Prediction,
};
pub use quality::{pooled, score_synthetic, synthesis_quality, SynthesisQuality};
