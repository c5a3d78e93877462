//! Evaluation: confusion-matrix metrics, one-vs-rest ROC-AUC, per-epoch
//! traces with early stopping, and a synthetic labelled dataset.

mod auc;
mod early_stop;
mod metrics;
mod synth;

pub use auc::{roc_auc_ovr, AucReport};
pub use early_stop::{early_stop, EarlyStopCfg, EpochTrace, StopDecision};
pub use metrics::{confusion, f1_score, precision_recall_f1, CategoryMetrics, ConfusionMatrix, MetricsReport};
pub use synth::synth_dataset;
