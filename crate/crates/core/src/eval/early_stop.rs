use crate::error::{config_err, usage_err};
use crate::Result;

/// One row of a training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochTrace {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopCfg {
    /// Epochs without a validation-accuracy gain above `min_delta` before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopCfg {
    fn default() -> Self {
        Self {
            patience: 6,
            max_epochs: 30,
            min_delta: 0.0,
        }
    }
}

impl EarlyStopCfg {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(config_err!("early_stop.patience must be at least 1"));
        }
        if self.max_epochs < 1 {
            return Err(config_err!("early_stop.max_epochs must be at least 1"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(config_err!("early_stop.min_delta must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    /// Epoch with the highest validation accuracy (earliest on ties).
    pub best_epoch: usize,
}

/// Decides whether training should stop after the last epoch in `trace`.
pub fn early_stop(trace: &[EpochTrace], cfg: &EarlyStopCfg) -> Result<StopDecision> {
    let first = trace.first().ok_or_else(|| usage_err!("early stopping needs at least one epoch"))?;
    let mut best = *first;
    let mut reference = first.val_accuracy;
    let mut last_gain = first.epoch;
    for t in &trace[1..] {
        if t.val_accuracy > best.val_accuracy {
            best = *t;
        }
        if t.val_accuracy > reference + cfg.min_delta {
            reference = t.val_accuracy;
            last_gain = t.epoch;
        }
    }
    let current = trace[trace.len() - 1].epoch;
    Ok(StopDecision {
        stop: current >= cfg.max_epochs || current - last_gain >= cfg.patience,
        best_epoch: best.epoch,
    })
}
