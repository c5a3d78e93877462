use alloc::vec::Vec;

use super::loss::{margin_loss, predict, MarginLoss};
use super::network::{backward, forward, CapsNet};
use super::{Adam, CapsNetParams};
use crate::error::{config_err, usage_err};
use crate::eval::{early_stop, EarlyStopCfg, EpochTrace};
use crate::numerics::{RandomStream, Tensor};
use crate::preprocess::ImagePatch;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CapsTrainCfg {
    pub learning_rate: f64,
    pub mini_batch_size: usize,
    pub loss: MarginLoss,
    pub early_stop: EarlyStopCfg,
    pub seed: u64,
}

impl Default for CapsTrainCfg {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            mini_batch_size: 16,
            loss: MarginLoss::default(),
            early_stop: EarlyStopCfg::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub traces: Vec<EpochTrace>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

fn labelled(batch: &[ImagePatch], k: usize) -> Result<Vec<(&ImagePatch, usize)>> {
    batch
        .iter()
        .map(|p| {
            p.check_label(k)?;
            p.label
                .map(|l| (p, l))
                .ok_or_else(|| usage_err!("{}: training example without a label", p.source_id))
        })
        .collect()
}

/// Mean margin loss and accuracy of `net` on `data`.
pub(crate) fn evaluate(net: &CapsNet, data: &[(&ImagePatch, usize)], loss: &MarginLoss) -> Result<(f64, f64)> {
    let (mut total, mut correct) = (0.0, 0usize);
    for &(p, label) in data {
        let f = net.forward(p)?;
        total += margin_loss(&f.norms, label, loss)?;
        correct += usize::from(predict(&f.norms) == label);
    }
    let n = data.len().max(1) as f64;
    Ok((total / n, correct as f64 / n))
}

/// Mini-batch Adam on the margin loss with early stopping on validation
/// accuracy. On return `net` holds the parameters of the best epoch.
pub fn train_capsnet(net: &mut CapsNet, train: &[ImagePatch], val: &[ImagePatch], cfg: &CapsTrainCfg) -> Result<TrainOutcome> {
    if cfg.mini_batch_size == 0 {
        return Err(config_err!("mini_batch_size must be positive"));
    }
    cfg.early_stop.validate()?;
    let k = net.spec.category_count;
    let train = labelled(train, k)?;
    let val = labelled(val, k)?;
    if train.is_empty() || val.is_empty() {
        return Err(usage_err!("training needs non-empty train and validation sets"));
    }
    let mut stream = RandomStream::new(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut traces = Vec::new();
    let mut best = (0usize, net.params.clone());

    for epoch in 1..=cfg.early_stop.max_epochs {
        stream.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.mini_batch_size) {
            let mut acc = CapsNetParams::<f32>::zeros(&net.spec);
            for &i in chunk {
                let (p, label) = train[i];
                let f = forward(&p.pixels, &net.params, &net.spec)?;
                correct += usize::from(predict(&f.norms) == label);
                let (l, g) = backward(&net.params, &net.spec, &f.cache, label, &cfg.loss)?;
                loss_sum += l;
                acc.axpy(1.0, &g)?;
            }
            let scale = 1.0 / chunk.len() as f32;
            acc.tensors_mut().into_iter().for_each(|t| t.scale(scale));
            let grads: Vec<&Tensor<f32>> = acc.tensors().into_iter().collect();
            let mut params: Vec<&mut Tensor<f32>> = net.params.tensors_mut().into_iter().collect();
            opt.step(&mut params, &grads)?;
        }
        let (val_loss, val_accuracy) = evaluate(net, &val, &cfg.loss)?;
        traces.push(EpochTrace {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        });
        let decision = early_stop(&traces, &cfg.early_stop)?;
        if decision.best_epoch == epoch {
            best = (epoch, net.params.clone());
        }
        if decision.stop {
            break;
        }
    }
    let stopped_epoch = traces.len();
    net.params = best.1;
    Ok(TrainOutcome {
        traces,
        best_epoch: best.0,
        stopped_epoch,
    })
}
