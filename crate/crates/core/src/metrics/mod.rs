//! Segmentation scores, ROC AUC, rotation-equivariance error and the rotated
//! test-set evaluation protocol.

mod auc;
mod confusion;
mod equivariance;
mod evaluate;

pub use auc::auc;
pub use confusion::{confusion, metrics_from_confusion, ConfusionCounts, SegMetrics};
pub use equivariance::{equivariance_error, round_trip_region, EquivarianceError};
pub use evaluate::{
    evaluate, pad_to_multiple, AngleSummary, DiffMap, EvalOptions, EvalReport, EvalRow,
    EvalSummary, LabelMode, Predictor, RowMetrics,
};
