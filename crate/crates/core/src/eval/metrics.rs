use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One prediction on one test record, both in m/s.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub predicted: i32,
    pub truth: i32,
}

impl Prediction {
    pub fn new(predicted: i32, truth: i32) -> Self {
        Self { predicted, truth }
    }

    pub fn abs_error(&self) -> f64 {
        (f64::from(self.predicted) - f64::from(self.truth)).abs()
    }
}

pub fn pair_up(predicted: &[i32], truth: &[i32]) -> Result<Vec<Prediction>> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    Ok(predicted.iter().zip(truth).map(|(&p, &t)| Prediction::new(p, t)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// MAE over records whose truth is this class; 0 without support.
    pub mae: f64,
    pub rmse: f64,
}

/// Rows are truth, columns predictions, both over `labels`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<i32>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(preds: &[Prediction]) -> Self {
        let labels: Vec<i32> = preds
            .iter()
            .flat_map(|p| [p.predicted, p.truth])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pos = |l: i32| labels.binary_search(&l).expect("label collected above");
        let mut counts = vec![vec![0; labels.len()]; labels.len()];
        for p in preds {
            counts[pos(p.truth)][pos(p.predicted)] += 1;
        }
        Self { labels, counts }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub per_class: BTreeMap<i32, ClassMetrics>,
    /// Mean f1 over classes present in the truth.
    pub macro_f1: f64,
    pub weighted_f1: f64,
    /// Predicted-only classes, left out of the macro average.
    pub excluded_from_macro: Vec<i32>,
    pub mae: f64,
    pub rmse: f64,
    pub histogram_bin_width: f64,
    pub error_histogram: Vec<HistogramBin>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2PR / (P + R)`, 0 when both vanish.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn mae_rmse<'a>(preds: impl Iterator<Item = &'a Prediction>) -> (f64, f64) {
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    for p in preds {
        let e = p.abs_error();
        abs += e;
        sq += e * e;
        n += 1;
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (abs / n as f64, (sq / n as f64).sqrt())
    }
}

/// [`compute_metrics_binned`] with 1 m/s histogram bins.
pub fn compute_metrics(preds: &[Prediction]) -> Result<MetricsReport> {
    compute_metrics_binned(preds, 1.0)
}

pub fn compute_metrics_binned(preds: &[Prediction], bin_width: f64) -> Result<MetricsReport> {
    let histogram = error_histogram(preds, bin_width)?;
    let confusion = ConfusionMatrix::from_predictions(preds);
    let k = confusion.labels.len();
    let mut per_class = BTreeMap::new();
    let mut excluded = Vec::new();
    let (mut macro_sum, mut present, mut weighted) = (0.0, 0usize, 0.0);
    for (i, &label) in confusion.labels.iter().enumerate() {
        let tp = confusion.counts[i][i];
        let support: usize = confusion.counts[i].iter().sum();
        let predicted: usize = (0..k).map(|r| confusion.counts[r][i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = f1_score(precision, recall);
        let (mae, rmse) = mae_rmse(preds.iter().filter(|p| p.truth == label));
        if support == 0 {
            excluded.push(label);
        } else {
            macro_sum += f1;
            present += 1;
            weighted += f1 * support as f64;
        }
        per_class.insert(
            label,
            ClassMetrics {
                support,
                predicted,
                true_positives: tp,
                precision,
                recall,
                f1,
                mae,
                rmse,
            },
        );
    }
    let (mae, rmse) = mae_rmse(preds.iter());
    Ok(MetricsReport {
        count: preds.len(),
        per_class,
        macro_f1: macro_sum / present as f64,
        weighted_f1: weighted / preds.len() as f64,
        excluded_from_macro: excluded,
        mae,
        rmse,
        histogram_bin_width: bin_width,
        error_histogram: histogram
            .into_iter()
            .map(|(bin, count)| HistogramBin {
                lower: bin as f64 * bin_width,
                count,
            })
            .collect(),
        confusion,
    })
}

/// Counts of `|ŷ − y|` per `[k·w, (k+1)·w)` bin, keyed by `k`.
pub fn error_histogram(preds: &[Prediction], bin_width: f64) -> Result<BTreeMap<u64, usize>> {
    let errors: Vec<f64> = preds.iter().map(Prediction::abs_error).collect();
    histogram(&errors, bin_width)
}

pub fn histogram(abs_errors: &[f64], bin_width: f64) -> Result<BTreeMap<u64, usize>> {
    if abs_errors.is_empty() {
        return Err(Error::Dataset("no predictions to evaluate".into()));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
    }
    let mut out = BTreeMap::new();
    for &e in abs_errors {
        if !(e >= 0.0 && e.is_finite()) {
            return Err(Error::Dataset(format!("absolute error must be finite and non-negative, got {e}")));
        }
        *out.entry((e / bin_width).floor() as u64).or_insert(0) += 1;
    }
    Ok(out)
}

pub fn histogram_to_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_lower,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{}", b.lower, b.count);
    }
    s
}

impl MetricsReport {
    /// Mean f1 over `labels`; a label absent from the report counts as 0.
    pub fn macro_f1_over(&self, labels: &[i32]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let sum: f64 = labels.iter().map(|l| self.per_class.get(l).map_or(0.0, |c| c.f1)).sum();
        sum / labels.len() as f64
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per class plus `macro` and `weighted` summary rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,support,precision,recall,f1,mae,rmse\n");
        for (label, c) in &self.per_class {
            let _ = writeln!(
                s,
                "{label},{},{},{},{},{},{}",
                c.support, c.precision, c.recall, c.f1, c.mae, c.rmse
            );
        }
        let _ = writeln!(s, "macro,{},,,{},{},{}", self.count, self.macro_f1, self.mae, self.rmse);
        let _ = writeln!(s, "weighted,{},,,{},{},{}", self.count, self.weighted_f1, self.mae, self.rmse);
        s
    }
}
