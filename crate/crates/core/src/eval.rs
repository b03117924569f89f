//! Scoring: confusion matrices, macro-F1 and micro-F1.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("label {label} at position {index} is outside 0..{m}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        m: usize,
    },
    #[error("confusion matrix holds no observations")]
    EmptyMatrix,
}

/// m x m counts; rows are gold classes, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    fn class_counts(&self, j: usize) -> (u64, u64, u64) {
        let tp = self.counts[j][j];
        let fp = (0..self.num_classes())
            .filter(|&g| g != j)
            .map(|g| self.counts[g][j])
            .sum();
        let fn_ = (0..self.num_classes())
            .filter(|&p| p != j)
            .map(|p| self.counts[j][p])
            .sum();
        (tp, fp, fn_)
    }
}

pub fn confusion(gold: &[usize], pred: &[usize], m: usize) -> Result<ConfusionMatrix, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut counts = vec![vec![0u64; m]; m];
    for (i, (&g, &p)) in gold.iter().zip(pred).enumerate() {
        for &label in [g, p].iter() {
            if label >= m {
                return Err(EvalError::LabelOutOfRange {
                    index: i,
                    label,
                    m,
                });
            }
        }
        counts[g][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

fn f1_from(tp: u64, fp: u64, fn_: u64) -> f64 {
    // 0/0 precision and recall are defined as 0, which makes F1 zero when
    // a class has no true positives.
    if tp == 0 {
        return 0.0;
    }
    let tp = tp as f64;
    2.0 * tp / (2.0 * tp + fp as f64 + fn_ as f64)
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let m = cm.num_classes();
    let sum: f64 = (0..m)
        .map(|j| {
            let (tp, fp, fn_) = cm.class_counts(j);
            f1_from(tp, fp, fn_)
        })
        .sum();
    Ok(sum / m as f64)
}

/// F1 over pooled counts. For single-label classification the pooled false
/// positives and false negatives coincide, so this equals accuracy.
pub fn micro_f1(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for j in 0..cm.num_classes() {
        let (t, f, n) = cm.class_counts(j);
        tp += t;
        fp += f;
        fn_ += n;
    }
    Ok(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

pub fn metrics_report(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let per_class = (0..cm.num_classes())
        .map(|j| {
            let (tp, fp, fn_) = cm.class_counts(j);
            let precision = if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let recall = if tp + fn_ == 0 {
                0.0
            } else {
                tp as f64 / (tp + fn_) as f64
            };
            let support = (0..cm.num_classes()).map(|p| cm.count(j, p)).sum();
            ClassMetrics {
                precision,
                recall,
                f1: f1_from(tp, fp, fn_),
                support,
            }
        })
        .collect();
    Ok(MetricsReport {
        macro_f1: macro_f1(cm)?,
        micro_f1: micro_f1(cm)?,
        per_class,
    })
}
