use alloc::vec::Vec;

use super::loss::{margin_loss, MarginLoss};
use super::network::{backward, forward};
use super::{CapsNetParams, CapsNetSpec};
use crate::numerics::{finite_diff_grad, max_relative_error, RandomStream, Tensor};
use crate::Result;

/// Largest relative error between analytic and central-difference gradients
/// of the margin loss, per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub per_tensor: Vec<(&'static str, f64)>,
}

impl GradientCheck {
    pub fn max_error(&self) -> f64 {
        self.per_tensor.iter().map(|&(_, e)| e).fold(0.0, f64::max)
    }
}

/// Compares `backward` with finite differences of step `h` on a random input,
/// everything in `f64`. `floor` bounds the denominator of the relative error.
pub fn check_gradients(spec: &CapsNetSpec, seed: u64, label: usize, h: f64, floor: f64) -> Result<GradientCheck> {
    let params = CapsNetParams::<f64>::init(spec, seed)?;
    let mut stream = RandomStream::new(seed).fork(1);
    let x = Tensor::<f64>::from_fn(&spec.input_shape, |_| stream.next_f64());
    let loss = MarginLoss::default();
    let f = forward(&x, &params, spec)?;
    let (_, grads) = backward(&params, spec, &f.cache, label, &loss)?;
    let mut per_tensor = Vec::new();
    for (idx, name) in CapsNetParams::<f64>::TENSOR_NAMES.into_iter().enumerate() {
        let probe = params.tensors()[idx].clone();
        let mut failure = None;
        let fd = finite_diff_grad(
            |t| {
                let mut p = params.clone();
                *p.tensors_mut()[idx] = t.clone();
                match forward(&x, &p, spec).and_then(|f| margin_loss(&f.norms, label, &loss)) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            &probe,
            h,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        per_tensor.push((name, max_relative_error(grads.tensors()[idx].data(), fd?.data(), floor)));
    }
    Ok(GradientCheck { per_tensor })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_relu_network_gradients() {
        let check = check_gradients(&CapsNetSpec::tiny(), 8, 1, 1e-4, 1e-8).unwrap();
        assert!(check.max_error() < 1e-4, "{check:?}");
    }
}
