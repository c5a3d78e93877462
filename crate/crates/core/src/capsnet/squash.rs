use alloc::vec::Vec;

use num_traits::Float;

/// Norm of `squash(s)` given `||s||`: `n^2 / (1 + n^2)`.
#[inline]
pub fn squash_norm(n: f64) -> f64 {
    n * n / (1.0 + n * n)
}

/// `v = (|s|^2 / (1 + |s|^2)) * s / |s|`; the zero vector maps to itself.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let mut out = s.to_vec();
    squash_in_place(&mut out);
    out
}

pub(crate) fn squash_in_place(s: &mut [f64]) {
    let n2: f64 = s.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return;
    }
    let n = Float::sqrt(n2);
    let a = n / (1.0 + n2);
    s.iter_mut().for_each(|x| *x *= a);
}

/// Vector-Jacobian product of [`squash`] at `s`.
///
/// With `a(n) = n / (1 + n^2)`: `J^T g = a g + (a'(n) / n) (s.g) s`.
pub fn squash_backward(s: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let n2: f64 = s.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return alloc::vec![0.0; s.len()];
    }
    let n = Float::sqrt(n2);
    let a = n / (1.0 + n2);
    let da_over_n = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n);
    let sg: f64 = s.iter().zip(grad_out).map(|(x, g)| x * g).sum();
    s.iter()
        .zip(grad_out)
        .map(|(&x, &g)| a * g + da_over_n * sg * x)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, Tensor};
    use crate::RandomStream;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_maps_to_zero() {
        assert_eq!(squash(&[0.0; 4]), alloc::vec![0.0; 4]);
    }

    #[test]
    fn unit_norm_halves() {
        let s = [0.6, 0.0, -0.8];
        let v = squash(&s);
        assert!((norm(&v) - 0.5).abs() < 1e-15);
        for (a, b) in v.iter().zip(&s) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_scalar_formula() {
        let mut r = RandomStream::new(21);
        let s: Vec<f64> = (0..8).map(|_| r.normal()).collect();
        let v = squash(&s);
        let sq: f64 = s.iter().map(|x| x * x).sum();
        let scale = sq / (1.0 + sq) / sq.sqrt();
        for (a, b) in v.iter().zip(&s) {
            assert!((a - scale * b).abs() < 1e-7);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = RandomStream::new(22);
        for scale in [0.1, 1.0, 3.0] {
            let s: Vec<f64> = (0..5).map(|_| scale * r.normal()).collect();
            let g: Vec<f64> = (0..5).map(|_| r.normal()).collect();
            let x = Tensor::from_vec(&[5], s.clone()).unwrap();
            let fd = finite_diff_grad(
                |t| squash(t.data()).iter().zip(&g).map(|(a, b)| a * b).sum(),
                &x,
                1e-5,
            )
            .unwrap();
            let an = squash_backward(&s, &g);
            for (a, b) in an.iter().zip(fd.data()) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }
}
