//! Late fusion of capsule norms with DBN features, and the referral policy.
//!
//! Both branches are trained first and then frozen; the fusion head is a
//! multinomial logistic regression over `[capsule norms || DBN features]`.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::capsnet::{train_capsnet, CapsNet, CapsNetSpec, CapsTrainCfg, TrainOutcome};
use crate::dbn::{default_specs, extract_features, pretrain_greedy, CrbmSpec, DbnStack, DbnTrainCfg};
use crate::error::{config_err, usage_err};
use crate::eval::{confusion, precision_recall_f1, EpochTrace, MetricsReport};
use crate::numerics::{sigmoid_scalar, softmax_slice, RandomStream, Real, Tensor};
use crate::preprocess::{median_filter, standardize_channels, ImagePatch, WhitenStats, WhitenStatus};
use crate::Result;

/// Category names in their default id order.
pub const CATEGORY_NAMES: [&str; 5] = [
    "Lesion not found",
    "Image with no referral",
    "Visited for different Reasons",
    "Low Risk of Cancer",
    "High Risk of Cancer",
];

/// Concatenates `norms` and `dbn_features` without rescaling.
pub fn fuse_features(norms: &[f64], dbn_features: &[f32], expected: (usize, usize)) -> Result<Vec<f64>> {
    if norms.len() != expected.0 || dbn_features.len() != expected.1 {
        return Err(config_err!(
            "fusion inputs have lengths ({}, {}), head expects {:?}",
            norms.len(),
            dbn_features.len(),
            expected
        ));
    }
    let mut out = Vec::with_capacity(norms.len() + dbn_features.len());
    out.extend_from_slice(norms);
    out.extend(dbn_features.iter().map(|&v| v as f64));
    Ok(out)
}

/// Softmax classifier over fused features.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead<T: Real = f32> {
    /// `[K, d_fused]`
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Real> FusionHead<T> {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[k, d]),
            bias: vec![T::zero(); k],
        }
    }

    pub fn categories(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn input_len(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn cast<U: Real>(&self) -> FusionHead<U> {
        FusionHead {
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|b| U::from_f64(b.as_f64())).collect(),
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_len() {
            return Err(config_err!("head expects {} features, got {}", self.input_len(), x.len()));
        }
        Ok((0..self.categories())
            .map(|j| {
                let row = self.weights.outer(j);
                row.iter().zip(x).fold(self.bias[j].as_f64(), |s, (w, v)| s + w.as_f64() * v)
            })
            .collect())
    }

    /// Class probabilities; they sum to one.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax_slice(&self.logits(x)?))
    }
}

/// Mean cross-entropy over `(features, labels)` and its gradient.
pub fn cross_entropy<T: Real>(head: &FusionHead<T>, features: &[Vec<f64>], labels: &[usize]) -> Result<(f64, FusionHead<f64>)> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(usage_err!("{} feature rows for {} labels", features.len(), labels.len()));
    }
    let (k, d) = (head.categories(), head.input_len());
    let mut grad = FusionHead::<f64>::zeros(k, d);
    let mut loss = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        if y >= k {
            return Err(usage_err!("label {y} out of range for {k} categories"));
        }
        let p = head.probabilities(x)?;
        loss -= num_traits::Float::ln(p[y].max(f64::MIN_POSITIVE));
        for j in 0..k {
            let delta = p[j] - if j == y { 1.0 } else { 0.0 };
            grad.bias[j] += delta;
            for (g, &v) in grad.weights.outer_mut(j).iter_mut().zip(x) {
                *g += delta * v;
            }
        }
    }
    let n = features.len() as f64;
    grad.weights.scale(1.0 / n);
    grad.bias.iter_mut().for_each(|b| *b /= n);
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionCfg {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `0` or anything `>=` the dataset size means full-batch.
    pub mini_batch_size: usize,
    /// Stop once the epoch-mean loss changes by less than this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for FusionCfg {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 30,
            mini_batch_size: 16,
            tolerance: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub head: FusionHead<f32>,
    pub traces: Vec<EpochTrace>,
}

fn accuracy(head: &FusionHead<f64>, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in features.iter().zip(labels) {
        correct += usize::from(argmax(&head.logits(x)?) == y);
    }
    Ok(correct as f64 / features.len().max(1) as f64)
}

/// Mini-batch gradient descent on the mean cross-entropy from a zero head.
///
/// `val`, when given, is only used to fill the validation columns of the
/// returned curve.
pub fn train_fusion(
    features: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    cfg: &FusionCfg,
    val: Option<(&[Vec<f64>], &[usize])>,
) -> Result<FusionOutcome> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(usage_err!("{} feature rows for {} labels", features.len(), labels.len()));
    }
    if let Some(c) = (0..k).find(|c| !labels.contains(c)) {
        return Err(config_err!("category {c} has no training example"));
    }
    let d = features[0].len();
    if features.iter().any(|x| x.len() != d) {
        return Err(config_err!("feature rows have differing lengths"));
    }
    let mut head = FusionHead::<f64>::zeros(k, d);
    let mut stream = RandomStream::new(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let batch = if cfg.mini_batch_size == 0 { features.len() } else { cfg.mini_batch_size.min(features.len()) };
    let mut traces = Vec::with_capacity(cfg.epochs);
    let mut previous = f64::INFINITY;
    for epoch in 1..=cfg.epochs {
        if batch < features.len() {
            stream.shuffle(&mut order);
        }
        for chunk in order.chunks(batch) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| features[i].clone()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, g) = cross_entropy(&head, &xs, &ys)?;
            head.weights.axpy(-cfg.learning_rate, &g.weights)?;
            for (b, gb) in head.bias.iter_mut().zip(&g.bias) {
                *b -= cfg.learning_rate * gb;
            }
        }
        let (train_loss, _) = cross_entropy(&head, features, labels)?;
        let (val_loss, val_accuracy) = match val {
            Some((vx, vy)) if !vx.is_empty() => (cross_entropy(&head, vx, vy)?.0, accuracy(&head, vx, vy)?),
            _ => (0.0, 0.0),
        };
        traces.push(EpochTrace {
            epoch,
            train_loss,
            train_accuracy: accuracy(&head, features, labels)?,
            val_loss,
            val_accuracy,
        });
        if (previous - train_loss).abs() < cfg.tolerance {
            break;
        }
        previous = train_loss;
    }
    head.weights.ensure_finite("fusion weights")?;
    Ok(FusionOutcome {
        head: head.cast(),
        traces,
    })
}

fn argmax(v: &[f64]) -> usize {
    crate::capsnet::predict(v)
}

/// Categories whose prediction triggers a specialist referral.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferralPolicy {
    categories: BTreeSet<usize>,
    category_count: usize,
}

impl ReferralPolicy {
    pub fn new(categories: impl IntoIterator<Item = usize>, category_count: usize) -> Result<Self> {
        let categories: BTreeSet<usize> = categories.into_iter().collect();
        if let Some(&c) = categories.iter().find(|&&c| c >= category_count) {
            return Err(config_err!("referral category {c} out of range for {category_count} categories"));
        }
        Ok(Self {
            categories,
            category_count,
        })
    }

    pub fn categories(&self) -> impl Iterator<Item = usize> + '_ {
        self.categories.iter().copied()
    }
}

impl Default for ReferralPolicy {
    /// "Low Risk of Cancer" and "High Risk of Cancer".
    fn default() -> Self {
        Self::new([3, 4], CATEGORY_NAMES.len()).expect("valid default")
    }
}

pub fn referral_decision(category: usize, policy: &ReferralPolicy) -> Result<bool> {
    if category >= policy.category_count {
        return Err(usage_err!("category {category} out of range for {} categories", policy.category_count));
    }
    Ok(policy.categories.contains(&category))
}

/// Metrics of the binary referral decision: category 0 is "no referral",
/// category 1 is "referral".
pub fn referral_summary(truths: &[usize], predictions: &[usize], policy: &ReferralPolicy) -> Result<MetricsReport> {
    let to_bin = |xs: &[usize]| -> Result<Vec<usize>> {
        xs.iter().map(|&c| referral_decision(c, policy).map(usize::from)).collect()
    };
    Ok(precision_recall_f1(&confusion(&to_bin(truths)?, &to_bin(predictions)?, 2)?))
}

/// Per-image preprocessing shared by training and inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocessing {
    /// Odd median window; `1` disables the filter.
    pub median_kernel: usize,
    pub eps: f64,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            median_kernel: 3,
            eps: crate::preprocess::DEFAULT_EPS,
        }
    }
}

impl Preprocessing {
    /// Median filter then per-channel standardization: the capsule input.
    pub fn prepare(&self, raw: &ImagePatch) -> Result<ImagePatch> {
        let filtered = if self.median_kernel > 1 {
            median_filter(raw, self.median_kernel)?
        } else {
            raw.clone()
        };
        standardize_channels(&filtered, self.eps)
    }
}

/// DBN visible units: whitened input mapped into `(0, 1)` by the logistic
/// function so it can be read as Bernoulli probabilities.
pub fn dbn_visible(prepared: &ImagePatch, whitening: &WhitenStats) -> Result<Tensor<f32>> {
    let w = whitening.apply(prepared)?;
    Ok(w.pixels.map(|v| sigmoid_scalar(v as f64) as f32))
}

/// Frozen capsule network, DBN and fusion head with their input transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub preprocessing: Preprocessing,
    pub capsnet: CapsNet,
    pub dbn: DbnStack,
    pub whitening: WhitenStats,
    pub head: FusionHead<f32>,
}

impl HybridModel {
    pub fn new(
        preprocessing: Preprocessing,
        capsnet: CapsNet,
        dbn: DbnStack,
        whitening: WhitenStats,
        head: FusionHead<f32>,
    ) -> Result<Self> {
        let k = capsnet.spec.category_count;
        if head.categories() != k || head.input_len() != k + dbn.feature_len() {
            return Err(config_err!(
                "fusion head [{}, {}] incompatible with {k} categories + {} DBN features",
                head.categories(),
                head.input_len(),
                dbn.feature_len()
            ));
        }
        if whitening.shape != dbn.input_shape() || whitening.shape != capsnet.spec.input_shape {
            return Err(config_err!(
                "input shapes disagree: whitening {:?}, DBN {:?}, capsnet {:?}",
                whitening.shape,
                dbn.input_shape(),
                capsnet.spec.input_shape
            ));
        }
        Ok(Self {
            preprocessing,
            capsnet,
            dbn,
            whitening,
            head,
        })
    }

    /// Fused features of an already prepared patch.
    pub fn features(&self, prepared: &ImagePatch) -> Result<Vec<f64>> {
        features_of(&self.capsnet, &self.dbn, &self.whitening, prepared)
    }

    /// Category and probabilities for an already prepared patch.
    pub fn predict_prepared(&self, prepared: &ImagePatch) -> Result<(usize, Vec<f64>)> {
        let p = self.head.probabilities(&self.features(prepared)?)?;
        Ok((argmax(&p), p))
    }

    /// Full pipeline on a raw `[0, 1]` patch.
    pub fn predict(&self, raw: &ImagePatch) -> Result<(usize, Vec<f64>)> {
        self.predict_prepared(&self.preprocessing.prepare(raw)?)
    }
}

/// `[capsule norms || DBN features]` for a prepared patch.
pub fn features_of(capsnet: &CapsNet, dbn: &DbnStack, whitening: &WhitenStats, prepared: &ImagePatch) -> Result<Vec<f64>> {
    let norms = capsnet.norms(prepared)?;
    let feats = extract_features(&dbn_visible(prepared, whitening)?, dbn)?;
    fuse_features(&norms, &feats, (capsnet.spec.category_count, dbn.feature_len()))
}

/// Runs the full pipeline on `raw`.
pub fn predict_hybrid(raw: &ImagePatch, model: &HybridModel) -> Result<(usize, Vec<f64>)> {
    model.predict(raw)
}

/// Everything needed to train the three stages.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridTrainCfg {
    pub preprocessing: Preprocessing,
    pub caps_spec: CapsNetSpec,
    pub caps: CapsTrainCfg,
    pub dbn_specs: Vec<CrbmSpec>,
    pub dbn: DbnTrainCfg,
    pub fusion: FusionCfg,
}

impl Default for HybridTrainCfg {
    fn default() -> Self {
        Self {
            preprocessing: Preprocessing::default(),
            caps_spec: CapsNetSpec::default(),
            caps: CapsTrainCfg::default(),
            dbn_specs: default_specs(3).expect("valid default geometry"),
            dbn: DbnTrainCfg::default(),
            fusion: FusionCfg::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridReport {
    pub whitening: WhitenStatus,
    /// Per-layer reconstruction error per epoch.
    pub dbn_traces: Vec<Vec<f64>>,
    pub caps: TrainOutcome,
    pub fusion: FusionOutcome,
}

pub fn prepare_all(pre: &Preprocessing, raw: &[ImagePatch]) -> Result<Vec<ImagePatch>> {
    raw.iter().map(|p| pre.prepare(p)).collect()
}

fn labels_of(batch: &[ImagePatch], k: usize) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|p| {
            p.check_label(k)?;
            p.label.ok_or_else(|| usage_err!("{}: example without a label", p.source_id))
        })
        .collect()
}

/// DBN pretraining, then CapsNet training, then the fusion head, each on
/// the frozen output of the previous stages. Whitening statistics are fitted
/// on `train_raw` only.
pub fn train_hybrid(train_raw: &[ImagePatch], val_raw: &[ImagePatch], cfg: &HybridTrainCfg) -> Result<(HybridModel, HybridReport)> {
    let k = cfg.caps_spec.category_count;
    cfg.caps_spec.validate()?;
    let train = prepare_all(&cfg.preprocessing, train_raw)?;
    let val = prepare_all(&cfg.preprocessing, val_raw)?;
    let (train_y, val_y) = (labels_of(&train, k)?, labels_of(&val, k)?);

    let whitening = WhitenStats::fit(&train, cfg.preprocessing.eps)?;
    let visible: Vec<Tensor<f32>> = train.iter().map(|p| dbn_visible(p, &whitening)).collect::<Result<_>>()?;
    let pretrained = pretrain_greedy(&visible, &cfg.dbn_specs, &cfg.dbn)?;

    let mut capsnet = CapsNet::init(cfg.caps_spec.clone(), cfg.caps.seed)?;
    let caps = train_capsnet(&mut capsnet, &train, &val, &cfg.caps)?;

    let dbn = pretrained.stack;
    let fused = |batch: &[ImagePatch]| -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|p| features_of(&capsnet, &dbn, &whitening, p)).collect()
    };
    let (train_x, val_x) = (fused(&train)?, fused(&val)?);
    let fusion = train_fusion(&train_x, &train_y, k, &cfg.fusion, Some((&val_x, &val_y)))?;

    let report = HybridReport {
        whitening: whitening.status(),
        dbn_traces: pretrained.traces,
        caps,
        fusion: fusion.clone(),
    };
    let model = HybridModel::new(cfg.preprocessing, capsnet, dbn, whitening, fusion.head)?;
    Ok((model, report))
}
