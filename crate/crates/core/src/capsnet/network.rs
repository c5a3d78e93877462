use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::loss::{margin_loss, margin_loss_grad, predict, MarginLoss};
use super::routing::{route_backward, route_traced, RoutingTrace};
use super::squash::{squash_backward, squash_in_place};
use super::{Activation, CapsNetParams, CapsNetSpec};
use crate::error::{config_err, usage_err};
use crate::numerics::{conv2d, conv2d_backward, conv2d_kernel_grad, Real, Tensor};
use crate::preprocess::ImagePatch;
use crate::Result;

/// Intermediates of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Real> {
    fingerprint: u64,
    input: Tensor<T>,
    conv_pre: Tensor<T>,
    conv_out: Tensor<T>,
    /// `[children, d1]` primary capsule preactivations, child-major.
    primary_pre: Vec<f64>,
    /// `[children, d1]` squashed primary capsule outputs.
    primary_out: Vec<f64>,
    predictions: Tensor<f64>,
    trace: RoutingTrace,
}

impl<T: Real> ForwardCache<T> {
    pub fn routing(&self) -> &RoutingTrace {
        &self.trace
    }

    pub fn predictions(&self) -> &Tensor<f64> {
        &self.predictions
    }
}

#[derive(Debug, Clone)]
pub struct Forward<T: Real> {
    /// `[K, d2]` category capsule outputs.
    pub class_vectors: Tensor<f64>,
    /// Euclidean norm of each category capsule, in `[0, 1)`.
    pub norms: Vec<f64>,
    pub cache: ForwardCache<T>,
}

impl<T: Real> Forward<T> {
    pub fn predicted(&self) -> usize {
        predict(&self.norms)
    }
}

fn activate<T: Real>(act: Activation, x: &Tensor<T>) -> Tensor<T> {
    match act {
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Tanh => x.map(|v| T::from_f64(Float::tanh(v.as_f64()))),
    }
}

pub fn forward<T: Real>(input: &Tensor<T>, params: &CapsNetParams<T>, spec: &CapsNetSpec) -> Result<Forward<T>> {
    if input.shape() != spec.input_shape {
        return Err(config_err!("input shape {:?}, network expects {:?}", input.shape(), spec.input_shape));
    }
    input.ensure_finite("capsnet input")?;
    let conv_pre = conv2d(input, &params.conv_kernels, Some(params.conv_bias.data()), 1)?;
    let conv_out = activate(spec.activation, &conv_pre);
    let prim = conv2d(&conv_out, &params.primary_kernels, Some(params.primary_bias.data()), spec.primary_stride)?;

    let (g_count, d1) = (spec.primary_groups, spec.primary_dim);
    let (ph, pw) = spec.primary_extent();
    let area = ph * pw;
    let children = g_count * area;
    let mut primary_pre = vec![0f64; children * d1];
    for g in 0..g_count {
        for pos in 0..area {
            let child = g * area + pos;
            for e in 0..d1 {
                primary_pre[child * d1 + e] = prim.data()[(g * d1 + e) * area + pos].as_f64();
            }
        }
    }
    let mut primary_out = primary_pre.clone();
    primary_out.chunks_exact_mut(d1).for_each(squash_in_place);

    let (k, d2) = (spec.category_count, spec.category_dim);
    let w = params.weights.data();
    let mut pred = vec![0f64; children * k * d2];
    for i in 0..children {
        let u = &primary_out[i * d1..(i + 1) * d1];
        for j in 0..k {
            for r in 0..d2 {
                let row = &w[((i * k + j) * d2 + r) * d1..][..d1];
                pred[(i * k + j) * d2 + r] = row.iter().zip(u).map(|(a, b)| a.as_f64() * b).sum();
            }
        }
    }
    let predictions = Tensor::from_vec(&[children, k, d2], pred)?;
    let trace = route_traced(&predictions, spec.routing_iters)?;
    let class_vectors = trace.iterations.last().expect("routing ran").outputs.clone();
    let norms = class_vectors
        .data()
        .chunks_exact(d2)
        .map(|v| Float::sqrt(v.iter().map(|x| x * x).sum::<f64>()))
        .collect();
    Ok(Forward {
        class_vectors,
        norms,
        cache: ForwardCache {
            fingerprint: params.fingerprint(),
            input: input.clone(),
            conv_pre,
            conv_out,
            primary_pre,
            primary_out,
            predictions,
            trace,
        },
    })
}

/// Margin loss and its exact gradient for every parameter.
///
/// Fails with a usage error if `params` changed since the forward pass that
/// produced `cache`.
pub fn backward<T: Real>(
    params: &CapsNetParams<T>,
    spec: &CapsNetSpec,
    cache: &ForwardCache<T>,
    label: usize,
    loss: &MarginLoss,
) -> Result<(f64, CapsNetParams<T>)> {
    if cache.fingerprint != params.fingerprint() {
        return Err(usage_err!("stale forward cache: parameters changed since the forward pass"));
    }
    let (k, d1, d2) = (spec.category_count, spec.primary_dim, spec.category_dim);
    let v = &cache.trace.iterations.last().expect("routing ran").outputs;
    let norms: Vec<f64> = v
        .data()
        .chunks_exact(d2)
        .map(|x| Float::sqrt(x.iter().map(|a| a * a).sum::<f64>()))
        .collect();
    let value = margin_loss(&norms, label, loss)?;
    let dnorm = margin_loss_grad(&norms, label, loss)?;

    let mut grad_v = vec![0f64; k * d2];
    for j in 0..k {
        if norms[j] > 0.0 && dnorm[j] != 0.0 {
            for e in 0..d2 {
                grad_v[j * d2 + e] = dnorm[j] * v.data()[j * d2 + e] / norms[j];
            }
        }
    }
    let grad_pred = route_backward(&cache.predictions, &cache.trace, &grad_v)?;

    let children = cache.primary_out.len() / d1;
    let w = params.weights.data();
    let gp = grad_pred.data();
    let mut grad_w = Vec::with_capacity(w.len());
    let mut grad_u = vec![0f64; children * d1];
    for i in 0..children {
        let u = &cache.primary_out[i * d1..(i + 1) * d1];
        for j in 0..k {
            for r in 0..d2 {
                let g = gp[(i * k + j) * d2 + r];
                let row = &w[((i * k + j) * d2 + r) * d1..][..d1];
                for e in 0..d1 {
                    grad_w.push(T::from_f64(g * u[e]));
                    grad_u[i * d1 + e] += g * row[e].as_f64();
                }
            }
        }
    }

    let (ph, pw) = spec.primary_extent();
    let area = ph * pw;
    let mut grad_prim = Tensor::<T>::zeros(&[spec.primary_channels(), ph, pw]);
    for i in 0..children {
        let (g, pos) = (i / area, i % area);
        let gs = squash_backward(&cache.primary_pre[i * d1..(i + 1) * d1], &grad_u[i * d1..(i + 1) * d1]);
        for (e, val) in gs.into_iter().enumerate() {
            grad_prim.data_mut()[(g * d1 + e) * area + pos] = T::from_f64(val);
        }
    }
    let prim = conv2d_backward(&cache.conv_out, &params.primary_kernels, &grad_prim, spec.primary_stride)?;

    let mut grad_conv = prim.input;
    match spec.activation {
        Activation::Relu => {
            for (g, &z) in grad_conv.data_mut().iter_mut().zip(cache.conv_pre.data()) {
                if z <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        Activation::Tanh => {
            for (g, &a) in grad_conv.data_mut().iter_mut().zip(cache.conv_out.data()) {
                *g = *g * (T::one() - a * a);
            }
        }
    }
    let (gk, gb) = conv2d_kernel_grad(&cache.input, &grad_conv, spec.conv_kernel, 1)?;

    let grads = CapsNetParams {
        conv_bias: Tensor::from_vec(&[gb.len()], gb)?,
        conv_kernels: gk,
        primary_bias: Tensor::from_vec(&[prim.bias.len()], prim.bias)?,
        primary_kernels: prim.kernels,
        weights: Tensor::from_vec(params.weights.shape(), grad_w)?,
    };
    for (t, name) in grads.tensors().iter().zip(CapsNetParams::<T>::TENSOR_NAMES) {
        t.ensure_finite(name)?;
    }
    Ok((value, grads))
}

/// A network architecture together with `f32` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsNet {
    pub spec: CapsNetSpec,
    pub params: CapsNetParams<f32>,
}

impl CapsNet {
    pub fn new(spec: CapsNetSpec, params: CapsNetParams<f32>) -> Result<Self> {
        spec.validate()?;
        params.check(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn init(spec: CapsNetSpec, seed: u64) -> Result<Self> {
        let params = CapsNetParams::init(&spec, seed)?;
        Ok(Self { spec, params })
    }

    pub fn forward(&self, patch: &ImagePatch) -> Result<Forward<f32>> {
        forward(&patch.pixels, &self.params, &self.spec)
    }

    /// Category capsule norms for `patch`.
    pub fn norms(&self, patch: &ImagePatch) -> Result<Vec<f64>> {
        Ok(self.forward(patch)?.norms)
    }

    pub fn predict(&self, patch: &ImagePatch) -> Result<usize> {
        Ok(predict(&self.norms(patch)?))
    }
}
