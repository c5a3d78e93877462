use alloc::vec::Vec;

use crate::error::{numeric_err, usage_err};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    /// `None` for categories without both positives and negatives.
    pub per_category: Vec<Option<f64>>,
    /// Mean over the categories that were evaluated.
    pub macro_auc: Option<f64>,
    pub skipped: Vec<usize>,
}

/// One-vs-rest ROC-AUC per category, macro-averaged.
///
/// Each category's AUC is `(2 * wins + ties) / (2 * P * N)` over all
/// positive/negative pairs, computed with integer counts.
pub fn roc_auc_ovr(scores: &[Vec<f64>], truths: &[usize], k: usize) -> Result<AucReport> {
    if scores.len() != truths.len() {
        return Err(usage_err!("{} score rows for {} labels", scores.len(), truths.len()));
    }
    for (i, (row, &t)) in scores.iter().zip(truths).enumerate() {
        if row.len() != k || t >= k {
            return Err(usage_err!("example {i}: {} scores / label {t} for {k} categories", row.len()));
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(numeric_err!("example {i}: NaN score"));
        }
    }
    let mut per_category = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    for c in 0..k {
        let mut neg: Vec<f64> = Vec::new();
        let mut pos: Vec<f64> = Vec::new();
        for (row, &t) in scores.iter().zip(truths) {
            if t == c {
                pos.push(row[c]);
            } else {
                neg.push(row[c]);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            per_category.push(None);
            skipped.push(c);
            continue;
        }
        neg.sort_unstable_by(f64::total_cmp);
        let mut twice_wins: u128 = 0;
        for &p in &pos {
            let below = neg.partition_point(|&n| n < p);
            let not_above = neg.partition_point(|&n| n <= p);
            twice_wins += 2 * below as u128 + (not_above - below) as u128;
        }
        let pairs = 2 * pos.len() as u128 * neg.len() as u128;
        per_category.push(Some(twice_wins as f64 / pairs as f64));
    }
    let evaluated: Vec<f64> = per_category.iter().flatten().copied().collect();
    let macro_auc = if evaluated.is_empty() {
        None
    } else {
        Some(evaluated.iter().sum::<f64>() / evaluated.len() as f64)
    };
    Ok(AucReport {
        per_category,
        macro_auc,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_and_constant() {
        let scores = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.3, 0.7], vec![0.1, 0.9]];
        let truths = [0, 0, 1, 1];
        assert_eq!(roc_auc_ovr(&scores, &truths, 2).unwrap().macro_auc, Some(1.0));
        let flat = vec![vec![0.5, 0.5]; 4];
        assert_eq!(roc_auc_ovr(&flat, &truths, 2).unwrap().macro_auc, Some(0.5));
    }

    #[test]
    fn small_hand_set() {
        // category 0 positives score {0.6, 0.3}, negatives {0.4, 0.3}:
        // pairs: 0.6>0.4, 0.6>0.3, 0.3<0.4, 0.3=0.3 -> (1+1+0+0.5)/4
        let scores = vec![vec![0.6, 0.4], vec![0.3, 0.7], vec![0.4, 0.6], vec![0.3, 0.7]];
        let truths = [0, 0, 1, 1];
        let r = roc_auc_ovr(&scores, &truths, 2).unwrap();
        assert_eq!(r.per_category[0], Some(0.625));
        // category 1 positives {0.6, 0.7}, negatives {0.4, 0.7}: (1+0.5+1+1... )
        // 0.6>0.4, 0.6<0.7, 0.7>0.4, 0.7=0.7 -> 2.5/4
        assert_eq!(r.per_category[1], Some(0.625));
        assert_eq!(r.macro_auc, Some(0.625));
    }

    #[test]
    fn degenerate_category_skipped() {
        let scores = vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0]];
        let r = roc_auc_ovr(&scores, &[0, 1], 3).unwrap();
        assert_eq!(r.skipped, vec![2]);
        assert_eq!(r.macro_auc, Some(1.0));
    }

    #[test]
    fn nan_rejected() {
        assert!(roc_auc_ovr(&[vec![f64::NAN, 0.0]], &[0], 2).is_err());
    }
}
