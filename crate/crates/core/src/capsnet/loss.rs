use alloc::vec::Vec;

use crate::error::usage_err;
use crate::Result;

/// Squared-hinge margin loss on capsule norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLoss {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
}

impl Default for MarginLoss {
    fn default() -> Self {
        Self {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda: 0.5,
        }
    }
}

fn check_label(norms: &[f64], label: usize) -> Result<()> {
    if label >= norms.len() {
        return Err(usage_err!("label {label} out of range for {} categories", norms.len()));
    }
    Ok(())
}

/// `sum_k T_k max(0, m+ - n_k)^2 + lambda (1 - T_k) max(0, n_k - m-)^2`.
pub fn margin_loss(norms: &[f64], label: usize, cfg: &MarginLoss) -> Result<f64> {
    check_label(norms, label)?;
    Ok(norms
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            if k == label {
                (cfg.m_plus - n).max(0.0).powi(2)
            } else {
                cfg.lambda * (n - cfg.m_minus).max(0.0).powi(2)
            }
        })
        .sum())
}

/// Derivative of [`margin_loss`] with respect to each norm.
pub fn margin_loss_grad(norms: &[f64], label: usize, cfg: &MarginLoss) -> Result<Vec<f64>> {
    check_label(norms, label)?;
    Ok(norms
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            if k == label {
                -2.0 * (cfg.m_plus - n).max(0.0)
            } else {
                2.0 * cfg.lambda * (n - cfg.m_minus).max(0.0)
            }
        })
        .collect())
}

/// Index of the largest norm; ties go to the lowest index.
pub fn predict(norms: &[f64]) -> usize {
    let mut best = 0;
    for (k, &n) in norms.iter().enumerate().skip(1) {
        if n > norms[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RandomStream;

    #[test]
    fn inside_margins_is_zero() {
        let l = margin_loss(&[0.95, 0.05, 0.05, 0.05, 0.05], 0, &MarginLoss::default()).unwrap();
        assert_eq!(l, 0.0);
        let g = margin_loss_grad(&[0.95, 0.05, 0.05, 0.05, 0.05], 0, &MarginLoss::default()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_zero_norms() {
        let l = margin_loss(&[0.0; 5], 0, &MarginLoss::default()).unwrap();
        assert!((l - 0.81).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_recomputation() {
        let mut r = RandomStream::new(40);
        let norms: Vec<f64> = (0..5).map(|_| r.next_f64() * 0.999).collect();
        for label in 0..5 {
            let mut want = 0.0;
            for k in 0..5 {
                if k == label {
                    let d = 0.9 - norms[k];
                    if d > 0.0 {
                        want += d * d;
                    }
                } else {
                    let d = norms[k] - 0.1;
                    if d > 0.0 {
                        want += 0.5 * d * d;
                    }
                }
            }
            let got = margin_loss(&norms, label, &MarginLoss::default()).unwrap();
            assert!((got - want).abs() < 1e-7);
        }
    }

    #[test]
    fn invalid_label() {
        assert!(matches!(margin_loss(&[0.1; 3], 3, &MarginLoss::default()), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn predict_argmax_lowest_tie() {
        assert_eq!(predict(&[0.1, 0.9, 0.2, 0.1, 0.1]), 1);
        assert_eq!(predict(&[0.3; 5]), 0);
        let n = [0.2, 0.7, 0.7, 0.1];
        assert_eq!(predict(&n), 1);
        let halved: Vec<f64> = n.iter().map(|v| v * 0.5).collect();
        assert_eq!(predict(&halved), predict(&n));
    }
}
