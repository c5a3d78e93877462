//! Routing-by-agreement between child capsules and parent capsules.
//!
//! Logits start at zero. Each iteration turns logits into couplings with a
//! softmax over parents, forms the coupling-weighted sum of predictions per
//! parent, squashes it, and (except on the last iteration) adds the
//! agreement `<u_hat_{j|i}, v_j>` to the logits.

use alloc::vec;
use alloc::vec::Vec;

use super::squash::{squash, squash_backward};
use crate::error::config_err;
use crate::numerics::{softmax_slice, Real, Tensor};
use crate::Result;

/// Routing variables after the final iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    /// `[children, parents]`
    pub logits: Tensor<f64>,
    /// `[children, parents]`, rows sum to one.
    pub couplings: Tensor<f64>,
    /// `[parents, dim]`
    pub preactivations: Tensor<f64>,
    /// `[parents, dim]`, every row has norm below one.
    pub outputs: Tensor<f64>,
}

/// Per-iteration couplings, preactivations and outputs, kept for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTrace {
    pub iterations: Vec<RoutingState>,
}

fn pred_dims<T: Real>(p: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *p.shape() {
        [c, k, d] => Ok((c, k, d)),
        _ => Err(config_err!("predictions must be [children, parents, dim], got {:?}", p.shape())),
    }
}

/// Runs `iters` routing iterations and returns every intermediate state.
pub fn route_traced<T: Real>(predictions: &Tensor<T>, iters: usize) -> Result<RoutingTrace> {
    if iters < 1 {
        return Err(config_err!("routing needs at least one iteration, got {iters}"));
    }
    predictions.ensure_finite("routing predictions")?;
    let (children, parents, dim) = pred_dims(predictions)?;
    let u: Vec<f64> = predictions.data().iter().map(|x| x.as_f64()).collect();
    let mut logits = vec![0f64; children * parents];
    let mut iterations = Vec::with_capacity(iters);
    for it in 0..iters {
        let mut couplings = Vec::with_capacity(children * parents);
        for row in logits.chunks_exact(parents) {
            couplings.extend(softmax_slice(row));
        }
        let mut s = vec![0f64; parents * dim];
        for i in 0..children {
            for j in 0..parents {
                let c = couplings[i * parents + j];
                let src = &u[(i * parents + j) * dim..][..dim];
                for (acc, &x) in s[j * dim..(j + 1) * dim].iter_mut().zip(src) {
                    *acc += c * x;
                }
            }
        }
        let v: Vec<f64> = s.chunks_exact(dim).flat_map(squash).collect();
        if it + 1 < iters {
            for i in 0..children {
                for j in 0..parents {
                    let src = &u[(i * parents + j) * dim..][..dim];
                    let agree: f64 = src.iter().zip(&v[j * dim..(j + 1) * dim]).map(|(a, b)| a * b).sum();
                    logits[i * parents + j] += agree;
                }
            }
        }
        iterations.push(RoutingState {
            logits: Tensor::from_vec(&[children, parents], logits.clone())?,
            couplings: Tensor::from_vec(&[children, parents], couplings)?,
            preactivations: Tensor::from_vec(&[parents, dim], s)?,
            outputs: Tensor::from_vec(&[parents, dim], v)?,
        });
    }
    Ok(RoutingTrace { iterations })
}

/// Final routing state after `iters` iterations.
pub fn route<T: Real>(predictions: &Tensor<T>, iters: usize) -> Result<RoutingState> {
    let mut trace = route_traced(predictions, iters)?;
    Ok(trace.iterations.pop().expect("at least one iteration"))
}

/// Gradient of the final outputs w.r.t. the predictions, through every
/// unrolled iteration (couplings are not treated as constants).
pub fn route_backward(predictions: &Tensor<f64>, trace: &RoutingTrace, grad_outputs: &[f64]) -> Result<Tensor<f64>> {
    let (children, parents, dim) = pred_dims(predictions)?;
    if grad_outputs.len() != parents * dim {
        return Err(config_err!("output gradient has {} values, expected {}", grad_outputs.len(), parents * dim));
    }
    let u = predictions.data();
    let mut grad_u = vec![0f64; u.len()];
    // dL/d(logits entering the iteration after the current one)
    let mut grad_next_logits = vec![0f64; children * parents];
    let last = trace.iterations.len() - 1;
    for (t, state) in trace.iterations.iter().enumerate().rev() {
        let v = state.outputs.data();
        let mut grad_v = if t == last { grad_outputs.to_vec() } else { vec![0f64; parents * dim] };
        if t < last {
            // logits_{t+1} = logits_t + <u_hat, v_t>
            for i in 0..children {
                for j in 0..parents {
                    let gb = grad_next_logits[i * parents + j];
                    if gb == 0.0 {
                        continue;
                    }
                    let off = (i * parents + j) * dim;
                    for e in 0..dim {
                        grad_v[j * dim + e] += gb * u[off + e];
                        grad_u[off + e] += gb * v[j * dim + e];
                    }
                }
            }
        }
        let s = state.preactivations.data();
        let grad_s: Vec<f64> = (0..parents)
            .flat_map(|j| squash_backward(&s[j * dim..(j + 1) * dim], &grad_v[j * dim..(j + 1) * dim]))
            .collect();
        let c = state.couplings.data();
        let mut grad_logits = grad_next_logits.clone();
        let mut grad_c = vec![0f64; parents];
        for i in 0..children {
            for j in 0..parents {
                let off = (i * parents + j) * dim;
                let cij = c[i * parents + j];
                let gs = &grad_s[j * dim..(j + 1) * dim];
                let mut dot = 0.0;
                for e in 0..dim {
                    grad_u[off + e] += cij * gs[e];
                    dot += u[off + e] * gs[e];
                }
                grad_c[j] = dot;
            }
            let row = &c[i * parents..(i + 1) * parents];
            let mean: f64 = row.iter().zip(&grad_c).map(|(a, b)| a * b).sum();
            for j in 0..parents {
                grad_logits[i * parents + j] += row[j] * (grad_c[j] - mean);
            }
        }
        grad_next_logits = grad_logits;
    }
    Tensor::from_vec(predictions.shape(), grad_u)
}
