//! Evaluation metrics: argmax accuracy and rank-based AUC.

use crate::graphs::Split;
use crate::numcore::DenseMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric needs a nonempty mask")]
    EmptyMask,
    #[error("AUC is undefined when the mask holds a single class")]
    SingleClass,
    #[error("mask index {index} out of range for {len} nodes")]
    OutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    Auc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub split: Split,
    /// Always in `[0, 1]`.
    pub value: f64,
}

fn check_mask(mask: &[usize], len: usize) -> Result<(), MetricError> {
    if mask.is_empty() {
        return Err(MetricError::EmptyMask);
    }
    match mask.iter().find(|&&i| i >= len) {
        Some(&index) => Err(MetricError::OutOfRange { index, len }),
        None => Ok(()),
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of masked rows whose argmax equals the label.
pub fn accuracy(logits: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<f64, MetricError> {
    check_mask(mask, logits.rows().min(labels.len()))?;
    let correct = mask
        .iter()
        .filter(|&&i| argmax(logits.row(i)) == labels[i])
        .count();
    Ok(correct as f64 / mask.len() as f64)
}

/// Mann–Whitney AUC of positive-class scores; tied pairs count one half.
pub fn auc(scores: &[f64], labels: &[usize], mask: &[usize]) -> Result<f64, MetricError> {
    check_mask(mask, scores.len().min(labels.len()))?;
    let mut items: Vec<(f64, bool)> = mask.iter().map(|&i| (scores[i], labels[i] == 1)).collect();
    let pos = items.iter().filter(|(_, p)| *p).count();
    let neg = items.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j < items.len() && items[j].0 == items[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        rank_sum += midrank * items[i..j].iter().filter(|(_, p)| *p).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}
