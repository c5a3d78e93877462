use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::config_err;
use crate::numerics::{Real, Tensor};
use crate::Result;

/// Adam with bias correction; moments kept in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update of `params` (in order) with matching `grads`.
    pub fn step<T: Real>(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(config_err!("{} parameter tensors, {} gradients", params.len(), grads.len()));
        }
        let total: usize = params.iter().map(|p| p.len()).sum();
        if self.first.is_empty() {
            self.first = vec![0.0; total];
            self.second = vec![0.0; total];
        } else if self.first.len() != total {
            return Err(config_err!("optimizer state sized for {} values, got {total}", self.first.len()));
        }
        self.step += 1;
        let c1 = 1.0 - Float::powi(self.beta1, self.step);
        let c2 = 1.0 - Float::powi(self.beta2, self.step);
        let mut off = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            if p.shape() != g.shape() {
                return Err(config_err!("gradient shape {:?} for parameter {:?}", g.shape(), p.shape()));
            }
            for (i, (w, &dw)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let dw = dw.as_f64();
                let m = &mut self.first[off + i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * dw;
                let v = &mut self.second[off + i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * dw * dw;
                let upd = self.learning_rate * (self.first[off + i] / c1) / (Float::sqrt(self.second[off + i] / c2) + self.eps);
                *w = T::from_f64(w.as_f64() - upd);
            }
            off += p.len();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut x = Tensor::<f64>::from_vec(&[2], alloc::vec![3.0, -2.0]).unwrap();
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g = x.clone();
            opt.step(&mut [&mut x], &[&g]).unwrap();
        }
        assert!(x.data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut x = Tensor::<f32>::from_vec(&[2], alloc::vec![1.5, -0.5]).unwrap();
        let before = x.clone();
        let g = Tensor::<f32>::full(&[2], 1.0);
        Adam::new(0.0).step(&mut [&mut x], &[&g]).unwrap();
        assert_eq!(x, before);
    }
}
