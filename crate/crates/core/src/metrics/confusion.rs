use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub iou: f64,
    pub dice: f64,
}

/// Confusion counts of a binary prediction against a binary label, optionally
/// restricted to pixels where `region` is 1.
pub fn confusion(pred: &[u8], label: &[u8], region: Option<&[u8]>) -> Result<ConfusionCounts> {
    ensure!(
        pred.len() == label.len(),
        Shape,
        "prediction has {} pixels, label has {}",
        pred.len(),
        label.len()
    );
    if let Some(r) = region {
        ensure!(r.len() == label.len(), Shape, "region mask size mismatch");
    }
    let mut c = ConfusionCounts::default();
    for i in 0..pred.len() {
        if region.is_some_and(|r| r[i] == 0) {
            continue;
        }
        match (pred[i] != 0, label[i] != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64, empty_agrees: bool) -> f64 {
    if den == 0 {
        if empty_agrees {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Scores from counts. When a denominator is zero the relevant ground-truth
/// set is empty: the score is 1 if the prediction agrees (predicts nothing
/// in it either) and 0 otherwise.
pub fn metrics_from_confusion(c: &ConfusionCounts) -> SegMetrics {
    SegMetrics {
        accuracy: ratio(c.tp + c.tn, c.total(), true),
        sensitivity: ratio(c.tp, c.tp + c.fn_, c.fp == 0),
        specificity: ratio(c.tn, c.tn + c.fp, c.fn_ == 0),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_, true),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, true),
    }
}
