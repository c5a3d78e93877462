use alloc::vec::Vec;

use num_traits::Float;

use super::{Real, Tensor};
use crate::error::config_err;
use crate::Result;

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + Float::exp(-x))
    } else {
        let e = Float::exp(x);
        e / (1.0 + e)
    }
}

/// Logistic function, element-wise.
pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.ensure_finite("sigmoid input")?;
    Ok(x.map(|v| T::from_f64(sigmoid_scalar(v.as_f64()))))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Max-shifted softmax of a slice, in `f64`.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = x.iter().map(|&v| Float::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= s);
    e
}

/// Softmax along `axis`; every slice along that axis sums to one.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    x.ensure_finite("softmax input")?;
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(config_err!("softmax axis {axis} out of range for {:?}", shape));
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let data = x.data();
    let mut buf = Vec::with_capacity(n);
    for o in 0..outer {
        for i in 0..inner {
            buf.clear();
            buf.extend((0..n).map(|j| data[(o * n + j) * inner + i].as_f64()));
            for (j, p) in softmax_slice(&buf).into_iter().enumerate() {
                out.data_mut()[(o * n + j) * inner + i] = T::from_f64(p);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RandomStream;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let t = sigmoid(&Tensor::<f32>::zeros(&[3])).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.5));
        let t = sigmoid(&Tensor::<f64>::from_vec(&[2], alloc::vec![-800.0, 800.0]).unwrap()).unwrap();
        assert!(t.data()[0] >= 0.0 && t.data()[1] <= 1.0);
    }

    #[test]
    fn softmax_constant_is_uniform() {
        let t = softmax(&Tensor::<f64>::full(&[7], 3.3), 0).unwrap();
        assert!(t.data().iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_one_two_three() {
        // exp(k) / (e + e^2 + e^3), recomputed by hand in scalar math
        let e = [1f64.exp(), 2f64.exp(), 3f64.exp()];
        let z = e[0] + e[1] + e[2];
        let t = softmax(&Tensor::<f64>::from_vec(&[3], alloc::vec![1.0, 2.0, 3.0]).unwrap(), 0).unwrap();
        let expected = [0.09003, 0.24473, 0.66524];
        for i in 0..3 {
            assert!((t.data()[i] - expected[i]).abs() < 1e-5);
            assert!((t.data()[i] - e[i] / z).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_slices_sum_to_one_and_shift_invariant() {
        let mut s = RandomStream::new(11);
        let x = Tensor::<f64>::from_fn(&[4, 5, 3], |_| s.uniform(-6.0, 6.0));
        for axis in 0..3 {
            let p = softmax(&x, axis).unwrap();
            let shifted = softmax(&x.map(|v| v + 17.5), axis).unwrap();
            for (a, b) in p.data().iter().zip(shifted.data()) {
                assert!((a - b).abs() < 1e-6);
            }
            let shape = x.shape();
            let n = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..axis].iter().product();
            for o in 0..outer {
                for i in 0..inner {
                    let s: f64 = (0..n).map(|j| p.data()[(o * n + j) * inner + i]).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_finite_rejected() {
        let t = Tensor::<f32>::from_vec(&[2], alloc::vec![f32::INFINITY, 0.0]).unwrap();
        assert!(sigmoid(&t).is_err());
        assert!(softmax(&t, 0).is_err());
    }
}
