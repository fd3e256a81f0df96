//! Confusion matrix, per-class precision/recall/F1, and report rendering.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Rows index the true class, columns the predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    /// `counts[true * k + pred]`.
    pub counts: Vec<u64>,
}

/// One-vs-rest tallies for a single class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Precision/recall/F1 as fractions in [0, 1]; a zero denominator yields the
/// value 0 with the matching `undefined` flag set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub accuracy: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

impl ConfusionMatrix {
    pub fn from_pairs(
        class_names: &[String],
        true_labels: &[usize],
        predictions: &[usize],
    ) -> Result<Self> {
        if true_labels.len() != predictions.len() {
            return Err(Error::Data(format!(
                "{} labels vs {} predictions",
                true_labels.len(),
                predictions.len()
            )));
        }
        if true_labels.is_empty() {
            return Err(Error::Data("no samples to score".into()));
        }
        let k = class_names.len();
        let mut counts = vec![0u64; k * k];
        for (&t, &p) in true_labels.iter().zip(predictions) {
            if t >= k || p >= k {
                return Err(Error::Data(format!("label out of range: true {t}, pred {p}")));
            }
            counts[t * k + p] += 1;
        }
        Ok(Self {
            class_names: class_names.to_vec(),
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn class_counts(&self, class: usize) -> ClassCounts {
        let k = self.num_classes();
        let tp = self.counts[class * k + class];
        let fp: u64 = (0..k)
            .filter(|&t| t != class)
            .map(|t| self.counts[t * k + class])
            .sum();
        let fn_: u64 = (0..k)
            .filter(|&p| p != class)
            .map(|p| self.counts[class * k + p])
            .sum();
        let tn = self.total() - tp - fp - fn_;
        ClassCounts { tp, fp, fn_, tn }
    }

    /// Trace over total.
    pub fn overall_accuracy(&self) -> f64 {
        let k = self.num_classes();
        let trace: u64 = (0..k).map(|c| self.counts[c * k + c]).sum();
        trace as f64 / self.total() as f64
    }

    pub fn per_class_metrics(&self) -> Vec<ClassMetrics> {
        let total = self.total() as f64;
        (0..self.num_classes())
            .map(|c| {
                let ClassCounts { tp, fp, fn_, tn } = self.class_counts(c);
                let precision_undefined = tp + fp == 0;
                let recall_undefined = tp + fn_ == 0;
                let precision = if precision_undefined {
                    0.0
                } else {
                    tp as f64 / (tp + fp) as f64
                };
                let recall = if recall_undefined {
                    0.0
                } else {
                    tp as f64 / (tp + fn_) as f64
                };
                let f1_undefined = precision + recall == 0.0;
                let f1 = if f1_undefined {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support: tp + fn_,
                    accuracy: (tp + tn) as f64 / total,
                    precision_undefined,
                    recall_undefined,
                    f1_undefined,
                }
            })
            .collect()
    }
}

/// Fraction in [0, 1] to a whole percent, rounding halves up.
pub fn percent(fraction: f64) -> u32 {
    (fraction * 100.0 + 0.5).floor() as u32
}

/// Plain-text report: one row per class plus an overall accuracy line.
pub fn render_report(matrix: &ConfusionMatrix) -> String {
    let metrics = matrix.per_class_metrics();
    let name_w = matrix
        .class_names
        .iter()
        .map(|n| n.len())
        .max()
        .unwrap_or(0)
        .max(5);
    let mut out = format!(
        "{:name_w$}  {:>9}  {:>6}  {:>8}  {:>7}\n",
        "Class", "Precision", "Recall", "F1-Score", "Support"
    );
    for (name, m) in matrix.class_names.iter().zip(&metrics) {
        out.push_str(&format!(
            "{:name_w$}  {:>9}  {:>6}  {:>8}  {:>7}\n",
            name,
            percent(m.precision),
            percent(m.recall),
            percent(m.f1),
            m.support
        ));
    }
    out.push_str(&format!(
        "\nOverall accuracy: {}% ({}/{})\n",
        percent(matrix.overall_accuracy()),
        (0..matrix.num_classes())
            .map(|c| matrix.counts[c * matrix.num_classes() + c])
            .sum::<u64>(),
        matrix.total()
    ));
    out
}

/// Full-precision CSV: class,precision,recall,f1,support,accuracy.
pub fn metrics_to_csv(matrix: &ConfusionMatrix) -> String {
    let mut out = String::from("class,precision,recall,f1,support,accuracy\n");
    for (name, m) in matrix.class_names.iter().zip(matrix.per_class_metrics()) {
        out.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            m.precision, m.recall, m.f1, m.support, m.accuracy
        ));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    confusion: ConfusionMatrix,
    per_class: Vec<ClassMetrics>,
    overall_accuracy: f64,
}

pub fn metrics_to_json(matrix: &ConfusionMatrix) -> String {
    serde_json::to_string_pretty(&ReportJson {
        confusion: matrix.clone(),
        per_class: matrix.per_class_metrics(),
        overall_accuracy: matrix.overall_accuracy(),
    })
    .expect("metrics serialize")
}

/// One scored sample: source path, labels, and the full probability row.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub path: String,
    pub true_label: usize,
    pub predicted: usize,
    pub probabilities: Vec<f32>,
}

pub fn write_prediction_log(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{},{},{}", r.path, r.true_label, r.predicted));
        for p in &r.probabilities {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_prediction_log(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Data(format!("prediction log line {} malformed", lineno + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(bad());
        }
        records.push(PredictionRecord {
            path: fields[0].to_string(),
            true_label: fields[1].parse().map_err(|_| bad())?,
            predicted: fields[2].parse().map_err(|_| bad())?,
            probabilities: fields[3..]
                .iter()
                .map(|f| f.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?,
        });
    }
    Ok(records)
}
