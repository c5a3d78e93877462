use alloc::vec;
use alloc::vec::Vec;

use crate::error::usage_err;
use crate::Result;

/// `counts[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn categories(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return Err(usage_err!("label pair ({truth}, {predicted}) out of range for {} categories", self.k));
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }
}

pub fn confusion(truths: &[usize], predictions: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truths.len() != predictions.len() {
        return Err(usage_err!("{} truths but {} predictions", truths.len(), predictions.len()));
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&t, &p) in truths.iter().zip(predictions) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of examples whose true label is this category.
    pub support: u64,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_category: Vec<CategoryMetrics>,
    pub accuracy: f64,
    pub total: u64,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Per-category precision, recall and F1, plus overall accuracy.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> MetricsReport {
    let k = cm.categories();
    let per_category = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let predicted: u64 = (0..k).map(|t| cm.get(t, c)).sum();
            let support: u64 = cm.row(c).iter().sum();
            let (precision, dp) = ratio(tp, predicted);
            let (recall, dr) = ratio(tp, support);
            CategoryMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
                degenerate: dp || dr || precision + recall == 0.0,
            }
        })
        .collect();
    let total = cm.total();
    let correct: u64 = (0..k).map(|c| cm.get(c, c)).sum();
    MetricsReport {
        per_category,
        accuracy: ratio(correct, total).0,
        total,
    }
}
