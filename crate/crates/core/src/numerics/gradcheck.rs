use super::Tensor;
use crate::error::numeric_err;
use crate::Result;

/// Central-difference gradient of a scalar function, one coordinate at a time.
///
/// `grad[i] = (f(x + h e_i) - f(x - h e_i)) / 2h`, all in `f64`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(numeric_err!("objective not finite around coordinate {i}"));
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)`.
///
/// `floor` keeps coordinates whose true gradient is ~0 from dominating.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RandomStream;

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut s = RandomStream::new(4);
        let x = Tensor::<f64>::from_fn(&[3, 4], |_| s.normal());
        let g = finite_diff_grad(|t| t.sum(), &x, 1e-4).unwrap();
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn gradient_of_half_square_norm_is_x() {
        let mut s = RandomStream::new(5);
        let x = Tensor::<f64>::from_fn(&[10], |_| s.normal());
        let g = finite_diff_grad(|t| 0.5 * t.dot(t).unwrap(), &x, 1e-4).unwrap();
        for (a, b) in g.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_objective_errors() {
        let x = Tensor::<f64>::zeros(&[2]);
        assert!(finite_diff_grad(|_| f64::NAN, &x, 1e-4).is_err());
    }
}
