use alloc::vec::Vec;

use super::crbm::{cd_step, hidden_prob, max_pool, CrbmParams, CrbmSpec};
use crate::error::{config_err, usage_err};
use crate::numerics::{RandomStream, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DbnTrainCfg {
    pub learning_rate: f64,
    pub mini_batch_size: usize,
    pub epochs_per_layer: usize,
    pub cd_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DbnTrainCfg {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            mini_batch_size: 10,
            epochs_per_layer: 5,
            cd_steps: 1,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl DbnTrainCfg {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(config_err!("dbn learning_rate and weight_decay must be non-negative"));
        }
        if self.mini_batch_size == 0 || self.cd_steps == 0 {
            return Err(config_err!("dbn mini_batch_size and cd_steps must be at least 1"));
        }
        Ok(())
    }
}

/// Default three-layer geometry for 32x32 inputs with `channels` channels.
pub fn default_specs(channels: usize) -> Result<Vec<CrbmSpec>> {
    Ok(alloc::vec![
        CrbmSpec::new(32, channels, 8, 5, 2)?,
        CrbmSpec::new(14, 8, 12, 5, 2)?,
        CrbmSpec::new(5, 12, 16, 2, 2)?,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrbmLayer {
    pub spec: CrbmSpec,
    pub params: CrbmParams,
}

/// Greedily stacked CRBMs; each layer's visible maps are the previous
/// layer's pooled maps.
#[derive(Debug, Clone, PartialEq)]
pub struct DbnStack {
    layers: Vec<CrbmLayer>,
}

fn check_chain(specs: &[CrbmSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(config_err!("a DBN needs at least one layer"));
    }
    for (i, pair) in specs.windows(2).enumerate() {
        let (lo, hi) = (pair[0], pair[1]);
        if hi.visible_extent() != lo.pool_extent() || hi.visible_channels() != lo.groups() {
            return Err(Error::Geometry {
                keys: alloc::format!("layer{}.visible_extent, layer{}.groups", i + 2, i + 1),
                detail: alloc::format!(
                    "layer {} sees {}x{}x{} but layer {} pools to {}x{}x{}",
                    i + 2,
                    hi.visible_channels(),
                    hi.visible_extent(),
                    hi.visible_extent(),
                    i + 1,
                    lo.groups(),
                    lo.pool_extent(),
                    lo.pool_extent()
                ),
            });
        }
    }
    Ok(())
}

impl DbnStack {
    pub fn new(layers: Vec<CrbmLayer>) -> Result<Self> {
        let specs: Vec<CrbmSpec> = layers.iter().map(|l| l.spec).collect();
        check_chain(&specs)?;
        for l in &layers {
            l.params.check(&l.spec)?;
        }
        Ok(Self { layers })
    }

    pub fn init(specs: &[CrbmSpec], seed: u64) -> Result<Self> {
        check_chain(specs)?;
        let root = RandomStream::new(seed);
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let mut s = root.fork(0x1000 + i as u64);
                CrbmLayer {
                    spec,
                    params: CrbmParams::init(&spec, &mut s),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(specs: &[CrbmSpec]) -> Result<Self> {
        check_chain(specs)?;
        Ok(Self {
            layers: specs
                .iter()
                .map(|&spec| CrbmLayer {
                    spec,
                    params: CrbmParams::zeros(&spec),
                })
                .collect(),
        })
    }

    pub fn layers(&self) -> &[CrbmLayer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<CrbmSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.layers[0].spec.visible_shape()
    }

    /// `N_top * NP_top^2`
    pub fn feature_len(&self) -> usize {
        let top = self.layers.last().expect("non-empty").spec;
        top.groups() * top.pool_extent() * top.pool_extent()
    }
}

/// Pooled hidden probabilities of one layer, no sampling.
fn propagate(layer: &CrbmLayer, v: &Tensor<f32>) -> Result<Tensor<f32>> {
    max_pool(&hidden_prob(v, &layer.params, &layer.spec)?, layer.spec.pool_window())
}

/// Flattened top pooling layer; deterministic.
pub fn extract_features(input: &Tensor<f32>, stack: &DbnStack) -> Result<Vec<f32>> {
    if input.shape() != stack.input_shape() {
        return Err(config_err!("DBN input shape {:?}, stack expects {:?}", input.shape(), stack.input_shape()));
    }
    let mut x = input.clone();
    for layer in stack.layers() {
        x = propagate(layer, &x)?;
    }
    Ok(x.into_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub stack: DbnStack,
    /// Mean reconstruction error per epoch, one list per layer.
    pub traces: Vec<Vec<f64>>,
}

/// Trains layer 1 on `data`, then each higher layer on the pooled hidden
/// probabilities of the (frozen) layer below.
pub fn pretrain_greedy(data: &[Tensor<f32>], specs: &[CrbmSpec], cfg: &DbnTrainCfg) -> Result<Pretrained> {
    cfg.validate()?;
    let mut stack = DbnStack::init(specs, cfg.seed)?;
    if data.is_empty() {
        return Err(usage_err!("pretraining needs data"));
    }
    let first = stack.input_shape();
    if let Some(t) = data.iter().find(|t| t.shape() != first) {
        return Err(config_err!("DBN input shape {:?}, layer 1 expects {:?}", t.shape(), first));
    }
    let root = RandomStream::new(cfg.seed);
    let mut current: Vec<Tensor<f32>> = data.to_vec();
    let mut traces = Vec::with_capacity(stack.layers.len());
    let depth = stack.layers.len();
    for (li, layer) in stack.layers.iter_mut().enumerate() {
        let mut stream = root.fork(li as u64);
        let mut order: Vec<usize> = (0..current.len()).collect();
        let mut trace = Vec::with_capacity(cfg.epochs_per_layer);
        for _ in 0..cfg.epochs_per_layer {
            stream.shuffle(&mut order);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.mini_batch_size) {
                let batch: Vec<Tensor<f32>> = chunk.iter().map(|&i| current[i].clone()).collect();
                total += cd_step(&batch, &mut layer.params, &layer.spec, cfg, &mut stream)? * chunk.len() as f64;
            }
            trace.push(total / current.len() as f64);
        }
        traces.push(trace);
        if li + 1 < depth {
            current = current.iter().map(|v| propagate(layer, v)).collect::<Result<_>>()?;
        }
    }
    Ok(Pretrained { stack, traces })
}

/// Two binary 12x12 patterns (horizontal and vertical bars of width 2),
/// `copies` of each, interleaved.
pub fn two_pattern_dataset(copies: usize) -> Vec<Tensor<f32>> {
    let bars = |vertical: bool| {
        Tensor::from_fn(&[1, 12, 12], |i| {
            let (y, x) = (i / 12 % 12, i % 12);
            let c = if vertical { x } else { y };
            if c / 2 % 2 == 0 { 1.0 } else { 0.0 }
        })
    };
    (0..2 * copies).map(|i| bars(i % 2 == 1)).collect()
}
