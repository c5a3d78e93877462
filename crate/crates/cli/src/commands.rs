//! One function per subcommand. Each reads its inputs from disk, writes its
//! outputs atomically under `out`, and returns a summary for the caller.

use std::path::{Path, PathBuf};

use capsdbn_core::capsnet::{train_capsnet, CapsNet, TrainOutcome};
use capsdbn_core::dbn::{pretrain_greedy, DbnStack};
use capsdbn_core::eval::{confusion, precision_recall_f1, roc_auc_ovr, synth_dataset, AucReport, MetricsReport};
use capsdbn_core::hybrid::{
    dbn_visible, features_of, referral_decision, referral_summary, train_fusion, FusionOutcome, HybridModel,
};
use capsdbn_core::preprocess::{augment, ImagePatch, WhitenStats, WhitenStatus};
use capsdbn_core::{Error, RandomStream, Tensor};

use crate::archive::{read_archive, write_archive, Archive};
use crate::checkpoint::{
    decode_capsnet, decode_dbn, decode_fusion, encode_capsnet, encode_dbn, encode_fusion, Checkpoint,
};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::fsio::write_atomic;
use crate::imageio::{read_png, write_png};
use crate::manifest::{manifest_text, read_manifest};
use crate::report;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const RUN_CONFIG_FILE: &str = "run.cfg";
pub const DBN_FILE: &str = "dbn.cblf";
pub const CAPS_FILE: &str = "caps.cblf";
pub const FUSION_FILE: &str = "fusion.cblf";

fn config_err(msg: impl Into<String>) -> CliError {
    Error::Config(msg.into()).into()
}

/// Writes a synthetic PNG dataset and its manifest; returns the manifest path.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    if cfg.input_channels != 3 {
        return Err(config_err("input.channels must be 3 for synthetic RGB data"));
    }
    let data = synth_dataset(cfg.categories.len(), cfg.synth_per_category, cfg.input_extent, cfg.synth_seed())?;
    let mut rows = Vec::with_capacity(data.len());
    for p in &data {
        let rel = format!("images/{}.png", p.source_id);
        write_png(&out.join(&rel), &p.pixels)?;
        rows.push((rel, cfg.categories[p.label.expect("synthetic patches are labelled")].as_str()));
    }
    let manifest = out.join(MANIFEST_FILE);
    write_atomic(&manifest, &manifest_text(rows.iter().map(|(p, l)| (p.as_str(), *l)))?)?;
    write_atomic(&out.join(RUN_CONFIG_FILE), cfg.to_text().as_bytes())?;
    Ok(manifest)
}

/// Per-category seeded shuffle; the first `round(n * fraction)` of each
/// category go to validation, keeping at least one training example.
/// Returns `true` for validation rows; input order is otherwise preserved.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> Vec<bool> {
    let mut is_val = vec![false; labels.len()];
    let root = RandomStream::new(seed);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    for c in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < 2 {
            continue;
        }
        root.fork(c as u64).shuffle(&mut idx);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1);
        for &i in &idx[..n_val] {
            is_val[i] = true;
        }
    }
    is_val
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub train: usize,
    pub validation: usize,
    pub whitening: WhitenStatus,
}

/// Loads the manifest, splits it, augments the training split, applies the
/// median filter and channel standardization, fits whitening statistics on
/// the training split and writes the archive.
pub fn cmd_preprocess(manifest: &Path, cfg: &RunConfig, out: &Path) -> Result<PreprocessSummary> {
    let rows = read_manifest(manifest, &cfg.categories)?;
    let want = [cfg.input_channels, cfg.input_extent, cfg.input_extent];
    let mut patches = Vec::with_capacity(rows.len());
    for r in &rows {
        let pixels = read_png(&r.path, cfg.input_channels)?;
        if pixels.shape() != want {
            return Err(CliError::Image {
                path: r.path.clone(),
                detail: format!("shape {:?}, input.channels/input.extent require {want:?}", pixels.shape()),
            });
        }
        patches.push(ImagePatch::ingest(pixels, Some(r.label), r.source.clone())?);
    }
    let labels: Vec<usize> = rows.iter().map(|r| r.label).collect();
    let is_val = stratified_split(&labels, cfg.validation_fraction, cfg.split_seed());
    let (val_raw, train_raw): (Vec<_>, Vec<_>) = patches.into_iter().zip(&is_val).partition(|(_, &v)| v);
    let train_raw: Vec<ImagePatch> = train_raw.into_iter().map(|(p, _)| p).collect();
    let val_raw: Vec<ImagePatch> = val_raw.into_iter().map(|(p, _)| p).collect();
    let train_raw = augment(&train_raw, &cfg.augment)?;
    let train = capsdbn_core::hybrid::prepare_all(&cfg.preprocessing, &train_raw)?;
    let validation = capsdbn_core::hybrid::prepare_all(&cfg.preprocessing, &val_raw)?;
    let whitening = WhitenStats::fit(&train, cfg.preprocessing.eps)?;
    let summary = PreprocessSummary {
        train: train.len(),
        validation: validation.len(),
        whitening: if train.len() < 2 { WhitenStatus::Degenerate } else { whitening.status() },
    };
    write_archive(out, &Archive { train, validation, whitening }, &cfg.to_text())?;
    Ok(summary)
}

fn labels_of(batch: &[ImagePatch]) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|p| p.label.ok_or_else(|| Error::Usage(format!("{}: patch has no label", p.source_id)).into()))
        .collect()
}

fn check_shape(what: &str, got: [usize; 3], want: [usize; 3]) -> Result<()> {
    if got != want {
        return Err(config_err(format!("{what} shape {got:?} does not match {want:?}")));
    }
    Ok(())
}

/// Greedy DBN pretraining on the whitened training split; returns the
/// per-layer reconstruction error traces.
pub fn cmd_pretrain_dbn(archive: &Path, cfg: &RunConfig, out: &Path) -> Result<Vec<Vec<f64>>> {
    let a = read_archive(archive)?;
    check_shape("archive", a.whitening.shape, cfg.dbn_specs[0].visible_shape())?;
    let visible: Vec<Tensor<f32>> = a.train.iter().map(|p| dbn_visible(p, &a.whitening)).collect::<Result<_, _>>()?;
    let pre = pretrain_greedy(&visible, &cfg.dbn_specs, &cfg.dbn)?;
    encode_dbn(&pre.stack, &a.whitening, &cfg.to_text()).save(&out.join(DBN_FILE))?;
    write_atomic(&out.join("dbn_errors.csv"), &report::dbn_errors_csv(&pre.traces))?;
    Ok(pre.traces)
}

pub fn cmd_train_caps(archive: &Path, cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let a = read_archive(archive)?;
    check_shape("archive", a.whitening.shape, cfg.caps_spec.input_shape)?;
    let mut net = CapsNet::init(cfg.caps_spec.clone(), cfg.caps.seed)?;
    let outcome = train_capsnet(&mut net, &a.train, &a.validation, &cfg.caps)?;
    encode_capsnet(&net, &cfg.to_text()).save(&out.join(CAPS_FILE))?;
    write_atomic(&out.join("curves.csv"), &report::curves_csv(&outcome.traces))?;
    Ok(outcome)
}

fn load_branches(caps: &Path, dbn: &Path) -> Result<(CapsNet, DbnStack, WhitenStats)> {
    let net = decode_capsnet(&Checkpoint::load(caps)?)?;
    let (stack, whitening) = decode_dbn(&Checkpoint::load(dbn)?)?;
    check_shape("DBN input", stack.input_shape(), net.spec.input_shape)?;
    check_shape("whitening", whitening.shape, net.spec.input_shape)?;
    Ok((net, stack, whitening))
}

/// Trains the fusion head on features of the frozen branches.
pub fn cmd_train_fusion(archive: &Path, caps: &Path, dbn: &Path, cfg: &RunConfig, out: &Path) -> Result<FusionOutcome> {
    let a = read_archive(archive)?;
    let (net, stack, whitening) = load_branches(caps, dbn)?;
    let k = cfg.categories.len();
    if net.spec.category_count != k {
        return Err(config_err(format!(
            "capsule checkpoint has {} categories, configuration has {k}",
            net.spec.category_count
        )));
    }
    check_shape("archive", a.whitening.shape, net.spec.input_shape)?;
    let fused = |batch: &[ImagePatch]| -> Result<Vec<Vec<f64>>> {
        Ok(batch.iter().map(|p| features_of(&net, &stack, &whitening, p)).collect::<Result<_, _>>()?)
    };
    let (train_x, val_x) = (fused(&a.train)?, fused(&a.validation)?);
    let (train_y, val_y) = (labels_of(&a.train)?, labels_of(&a.validation)?);
    let outcome = train_fusion(&train_x, &train_y, k, &cfg.fusion, Some((&val_x, &val_y)))?;
    HybridModel::new(cfg.preprocessing, net, stack, whitening, outcome.head.clone())?;
    encode_fusion(&outcome.head, &cfg.to_text()).save(&out.join(FUSION_FILE))?;
    write_atomic(&out.join("curves.csv"), &report::curves_csv(&outcome.traces))?;
    Ok(outcome)
}

/// A complete model and the configuration it was trained with.
pub struct LoadedModel {
    pub model: HybridModel,
    pub config: RunConfig,
}

pub fn load_model(caps: &Path, dbn: &Path, fusion: &Path) -> Result<LoadedModel> {
    let (net, stack, whitening) = load_branches(caps, dbn)?;
    let ck = Checkpoint::load(fusion)?;
    let head = decode_fusion(&ck)?;
    let config = RunConfig::parse(ck.text("config")?, &format!("{} (embedded config)", fusion.display()))?;
    if config.categories.len() != head.categories() {
        return Err(config_err("fusion head and its embedded category list disagree"));
    }
    let model = HybridModel::new(config.preprocessing, net, stack, whitening, head)?;
    Ok(LoadedModel { model, config })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub metrics: MetricsReport,
    pub referral: MetricsReport,
    pub validation_auc: AucReport,
    pub train_auc: AucReport,
}

fn score(model: &HybridModel, batch: &[ImagePatch]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut preds = Vec::with_capacity(batch.len());
    let mut probs = Vec::with_capacity(batch.len());
    for p in batch {
        let (c, pr) = model.predict_prepared(p)?;
        preds.push(c);
        probs.push(pr);
    }
    Ok((preds, probs))
}

/// Scores the validation split and writes `metrics.csv`, `confusion.csv`,
/// `referral.csv` and `auc.csv` (both splits).
pub fn cmd_evaluate(archive: &Path, caps: &Path, dbn: &Path, fusion: &Path, out: &Path) -> Result<EvalSummary> {
    let a = read_archive(archive)?;
    if a.validation.is_empty() {
        return Err(Error::Usage("archive has no validation split to evaluate".into()).into());
    }
    let LoadedModel { model, config } = load_model(caps, dbn, fusion)?;
    let k = config.categories.len();
    let truths = labels_of(&a.validation)?;
    let (preds, probs) = score(&model, &a.validation)?;
    let cm = confusion(&truths, &preds, k)?;
    let metrics = precision_recall_f1(&cm);
    let referral = referral_summary(&truths, &preds, &config.referral_policy()?)?;
    let validation_auc = roc_auc_ovr(&probs, &truths, k)?;
    let (_, train_probs) = score(&model, &a.train)?;
    let train_auc = roc_auc_ovr(&train_probs, &labels_of(&a.train)?, k)?;

    write_atomic(&out.join("metrics.csv"), &report::metrics_csv(&metrics, &config.categories))?;
    write_atomic(&out.join("confusion.csv"), &report::confusion_csv(&cm, &config.categories))?;
    let decisions = ["no_referral".to_string(), "referral".to_string()];
    write_atomic(&out.join("referral.csv"), &report::metrics_csv(&referral, &decisions))?;
    write_atomic(
        &out.join("auc.csv"),
        &report::auc_csv(&[("validation", &validation_auc), ("train", &train_auc)], &config.categories),
    )?;
    Ok(EvalSummary { metrics, referral, validation_auc, train_auc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub path: PathBuf,
    pub category: usize,
    pub category_name: String,
    pub probabilities: Vec<f64>,
    pub referral: bool,
}

pub fn cmd_predict(images: &[PathBuf], caps: &Path, dbn: &Path, fusion: &Path) -> Result<Vec<Prediction>> {
    let LoadedModel { model, config } = load_model(caps, dbn, fusion)?;
    let policy = config.referral_policy()?;
    let want = model.capsnet.spec.input_shape;
    images
        .iter()
        .map(|path| {
            let pixels = read_png(path, want[0])?;
            if pixels.shape() != want {
                return Err(CliError::Image {
                    path: path.clone(),
                    detail: format!("shape {:?}, model expects {want:?}", pixels.shape()),
                });
            }
            let raw = ImagePatch::ingest(pixels, None, path.display().to_string())?;
            let (category, probabilities) = model.predict(&raw)?;
            Ok(Prediction {
                path: path.clone(),
                category,
                category_name: config.categories[category].clone(),
                probabilities,
                referral: referral_decision(category, &policy)?,
            })
        })
        .collect()
}

/// `path,category,referral,p_<name>...` with a header row.
pub fn predictions_csv(preds: &[Prediction], categories: &[String]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["path".to_string(), "category".into(), "referral".into()];
    header.extend(categories.iter().map(|c| format!("p_{c}")));
    w.write_record(&header).unwrap();
    for p in preds {
        let mut row = vec![p.path.display().to_string(), p.category_name.clone(), p.referral.to_string()];
        row.extend(p.probabilities.iter().map(|v| format!("{v:.6}")));
        w.write_record(&row).unwrap();
    }
    w.into_inner().expect("writing to memory cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_seeded() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let a = stratified_split(&labels, 0.25, 7);
        assert_eq!(a, stratified_split(&labels, 0.25, 7));
        assert_ne!(a, stratified_split(&labels, 0.25, 8));
        for c in 0..3 {
            assert_eq!((0..60).filter(|&i| labels[i] == c && a[i]).count(), 5);
        }
        assert!(stratified_split(&[0, 0, 1], 0.9, 1) == vec![true, false, false] || stratified_split(&[0, 0, 1], 0.9, 1) == vec![false, true, false]);
        assert!(stratified_split(&labels, 0.0, 1).iter().all(|&v| !v));
    }
}
