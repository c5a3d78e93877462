//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown and
//! duplicate keys are rejected. Every cross-field geometry relation is
//! checked at parse time and failures name the offending keys.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use capsdbn_core::capsnet::{Activation, CapsNetSpec, CapsTrainCfg, MarginLoss};
use capsdbn_core::dbn::{CrbmSpec, DbnTrainCfg};
use capsdbn_core::eval::EarlyStopCfg;
use capsdbn_core::hybrid::{FusionCfg, HybridTrainCfg, Preprocessing, ReferralPolicy, CATEGORY_NAMES};
use capsdbn_core::preprocess::{AugmentSpec, Rotation};
use capsdbn_core::{Error, RandomStream};

use crate::error::{CliError, Result};

/// Stage tags for seed derivation.
const SEED_SPLIT: u64 = 1;
const SEED_AUGMENT: u64 = 2;
const SEED_DBN: u64 = 3;
const SEED_CAPS: u64 = 4;
const SEED_FUSION: u64 = 5;
const SEED_SYNTH: u64 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Category names in id order.
    pub categories: Vec<String>,
    /// Names of the categories that trigger a referral.
    pub referral: Vec<String>,
    pub validation_fraction: f64,
    pub synth_per_category: usize,
    pub input_channels: usize,
    pub input_extent: usize,
    pub preprocessing: Preprocessing,
    pub augment: AugmentSpec,
    pub caps_spec: CapsNetSpec,
    pub caps: CapsTrainCfg,
    pub dbn_specs: Vec<CrbmSpec>,
    pub dbn: DbnTrainCfg,
    pub fusion: FusionCfg,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hybrid = HybridTrainCfg::default();
        let mut cfg = Self {
            seed: 0,
            categories: CATEGORY_NAMES.iter().map(|s| s.to_string()).collect(),
            referral: vec![CATEGORY_NAMES[3].into(), CATEGORY_NAMES[4].into()],
            validation_fraction: 0.2,
            synth_per_category: 120,
            input_channels: hybrid.caps_spec.input_shape[0],
            input_extent: hybrid.caps_spec.input_shape[1],
            preprocessing: hybrid.preprocessing,
            augment: AugmentSpec::default(),
            caps_spec: hybrid.caps_spec,
            caps: hybrid.caps,
            dbn_specs: hybrid.dbn_specs,
            dbn: hybrid.dbn,
            fusion: hybrid.fusion,
        };
        cfg.set_seed(0);
        cfg
    }
}

fn stage_seed(root: u64, tag: u64) -> u64 {
    RandomStream::new(root).fork(tag).next_u64()
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Geometry { keys, detail } => Error::Geometry {
            keys: keys.split(", ").map(|k| format!("{prefix}{k}")).collect::<Vec<_>>().join(", "),
            detail,
        },
        Error::Config(msg) => Error::Config(format!("{prefix}{msg}")),
        other => other,
    }
}

fn geometry(keys: &str, detail: String) -> CliError {
    Error::Geometry { keys: keys.into(), detail }.into()
}

fn semantic(msg: impl Into<String>) -> CliError {
    Error::Config(msg.into()).into()
}

/// Parsed `key -> (line, value)` entries that have not been consumed yet.
struct Entries {
    origin: String,
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| CliError::ConfigSyntax { origin: origin.into(), line: i + 1, detail };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(err("empty key".into()));
            }
            if map.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(err(format!("duplicate key {k}")));
            }
        }
        Ok(Self { origin: origin.into(), map })
    }

    fn parse_value<T: FromStr>(&self, key: &str, line: usize, v: &str) -> Result<T> {
        v.parse().map_err(|_| CliError::ConfigSyntax {
            origin: self.origin.clone(),
            line,
            detail: format!("{key}: cannot parse {v:?}"),
        })
    }

    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.map.remove(key) {
            None => Ok(default),
            Some((line, v)) => self.parse_value(key, line, &v),
        }
    }

    /// Absent keys and the literal `none` both read as `None`.
    fn take_opt<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(default),
            Some((_, v)) if v == "none" => Ok(None),
            Some((line, v)) => self.parse_value(key, line, &v).map(Some),
        }
    }

    fn take_or<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Result<T> {
        match (self.map.remove(key), default) {
            (Some((line, v)), _) => self.parse_value(key, line, &v),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(semantic(format!("missing key {key}"))),
        }
    }

    fn take_list(&mut self, key: &str, default: &[String]) -> Result<Vec<String>> {
        Ok(match self.map.remove(key) {
            None => default.to_vec(),
            Some((_, v)) => v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        })
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(CliError::ConfigSyntax { origin: self.origin, line, detail: format!("unknown key {k}") }),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `text`; absent keys keep their defaults. `origin` labels
    /// syntax errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let d = Self::default();
        let mut e = Entries::parse(text, origin)?;
        let seed = e.take("seed", d.seed)?;
        let categories = e.take_list("categories", &d.categories)?;
        let referral = e.take_list("referral", &d.referral)?;
        let validation_fraction = e.take("split.validation_fraction", d.validation_fraction)?;
        let synth_per_category = e.take("synth.per_category", d.synth_per_category)?;
        let input_channels = e.take("input.channels", d.input_channels)?;
        let input_extent = e.take("input.extent", d.input_extent)?;
        let preprocessing = Preprocessing {
            median_kernel: e.take("preprocess.median_kernel", d.preprocessing.median_kernel)?,
            eps: e.take("preprocess.eps", d.preprocessing.eps)?,
        };
        let default_rotations: Vec<String> = d.augment.rotations.iter().map(|r| r.degrees().to_string()).collect();
        let rotations = e
            .take_list("augment.rotations", &default_rotations)?
            .iter()
            .map(|r| {
                r.parse().ok().and_then(Rotation::from_degrees).ok_or_else(|| {
                    semantic(format!("augment.rotations: {r:?} is not one of 90, 180, 270"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let augment = AugmentSpec {
            horizontal_flip: e.take("augment.horizontal_flip", d.augment.horizontal_flip)?,
            vertical_flip: e.take("augment.vertical_flip", d.augment.vertical_flip)?,
            rotations,
            crop_extent: e.take_opt("augment.crop_extent", d.augment.crop_extent)?,
            multiplier: e.take("augment.multiplier", d.augment.multiplier)?,
            seed: 0,
        };
        let ds = &d.caps_spec;
        let activation: String = e.take("caps.activation", ds.activation.name().to_string())?;
        let caps_spec = CapsNetSpec {
            input_shape: [input_channels, input_extent, input_extent],
            conv_filters: e.take("caps.conv_filters", ds.conv_filters)?,
            conv_kernel: e.take("caps.conv_kernel", ds.conv_kernel)?,
            primary_groups: e.take("caps.primary_groups", ds.primary_groups)?,
            primary_dim: e.take("caps.primary_dim", ds.primary_dim)?,
            primary_kernel: e.take("caps.primary_kernel", ds.primary_kernel)?,
            primary_stride: e.take("caps.primary_stride", ds.primary_stride)?,
            category_count: categories.len(),
            category_dim: e.take("caps.category_dim", ds.category_dim)?,
            routing_iters: e.take("caps.routing_iters", ds.routing_iters)?,
            activation: Activation::from_name(&activation)
                .ok_or_else(|| semantic(format!("caps.activation: unknown activation {activation:?}")))?,
        };
        let caps = CapsTrainCfg {
            learning_rate: e.take("caps.learning_rate", d.caps.learning_rate)?,
            mini_batch_size: e.take("caps.mini_batch_size", d.caps.mini_batch_size)?,
            loss: MarginLoss {
                m_plus: e.take("caps.margin_plus", d.caps.loss.m_plus)?,
                m_minus: e.take("caps.margin_minus", d.caps.loss.m_minus)?,
                lambda: e.take("caps.margin_lambda", d.caps.loss.lambda)?,
            },
            early_stop: EarlyStopCfg {
                patience: e.take("early_stop.patience", d.caps.early_stop.patience)?,
                max_epochs: e.take("early_stop.max_epochs", d.caps.early_stop.max_epochs)?,
                min_delta: e.take("early_stop.min_delta", d.caps.early_stop.min_delta)?,
            },
            seed: 0,
        };
        let dbn_specs = parse_layers(&mut e, &d.dbn_specs, input_channels, input_extent)?;
        let dbn = DbnTrainCfg {
            learning_rate: e.take("dbn.learning_rate", d.dbn.learning_rate)?,
            mini_batch_size: e.take("dbn.mini_batch_size", d.dbn.mini_batch_size)?,
            epochs_per_layer: e.take("dbn.epochs_per_layer", d.dbn.epochs_per_layer)?,
            cd_steps: e.take("dbn.cd_steps", d.dbn.cd_steps)?,
            weight_decay: e.take("dbn.weight_decay", d.dbn.weight_decay)?,
            seed: 0,
        };
        let fusion = FusionCfg {
            learning_rate: e.take("fusion.learning_rate", d.fusion.learning_rate)?,
            epochs: e.take("fusion.epochs", d.fusion.epochs)?,
            mini_batch_size: e.take("fusion.mini_batch_size", d.fusion.mini_batch_size)?,
            tolerance: e.take("fusion.tolerance", d.fusion.tolerance)?,
            seed: 0,
        };
        e.finish()?;
        let mut cfg = Self {
            seed,
            categories,
            referral,
            validation_fraction,
            synth_per_category,
            input_channels,
            input_extent,
            preprocessing,
            augment,
            caps_spec,
            caps,
            dbn_specs,
            dbn,
            fusion,
        };
        cfg.set_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the root seed and re-derives every stage seed from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.augment.seed = stage_seed(seed, SEED_AUGMENT);
        self.dbn.seed = stage_seed(seed, SEED_DBN);
        self.caps.seed = stage_seed(seed, SEED_CAPS);
        self.fusion.seed = stage_seed(seed, SEED_FUSION);
    }

    pub fn split_seed(&self) -> u64 {
        stage_seed(self.seed, SEED_SPLIT)
    }

    pub fn synth_seed(&self) -> u64 {
        stage_seed(self.seed, SEED_SYNTH)
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.len() < 2 {
            return Err(semantic("categories: at least two categories are required"));
        }
        for (i, c) in self.categories.iter().enumerate() {
            if c.contains([',', '\n', '=']) {
                return Err(semantic(format!("categories: name {c:?} may not contain ',', '=' or newlines")));
            }
            if self.categories[..i].contains(c) {
                return Err(semantic(format!("categories: duplicate name {c:?}")));
            }
        }
        self.referral_policy()?;
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(semantic("split.validation_fraction must lie in [0, 1)"));
        }
        if self.preprocessing.median_kernel == 0 || self.preprocessing.median_kernel.is_multiple_of(2) {
            return Err(semantic("preprocess.median_kernel must be odd"));
        }
        if !(self.preprocessing.eps > 0.0) {
            return Err(semantic("preprocess.eps must be positive"));
        }
        if self.augment.multiplier == 0 {
            return Err(semantic("augment.multiplier must be at least 1"));
        }
        if let Some(c) = self.augment.crop_extent {
            if c == 0 || c > self.input_extent {
                return Err(geometry("augment.crop_extent, input.extent", format!("crop {c} must lie in 1..={}", self.input_extent)));
            }
        }
        self.caps_spec.validate().map_err(|e| match prefixed("caps.", e) {
            Error::Geometry { keys, detail } => Error::Geometry {
                keys: keys.replace("caps.input_shape", "input.channels, input.extent"),
                detail,
            },
            other => other,
        })?;
        if !(self.caps.learning_rate > 0.0) || self.caps.mini_batch_size == 0 {
            return Err(semantic("caps.learning_rate must be positive and caps.mini_batch_size at least 1"));
        }
        self.caps.early_stop.validate()?;
        self.dbn.validate()?;
        if !(self.fusion.learning_rate >= 0.0) || self.fusion.epochs == 0 {
            return Err(semantic("fusion.learning_rate must be non-negative and fusion.epochs at least 1"));
        }
        Ok(())
    }

    pub fn category_id(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn referral_policy(&self) -> Result<ReferralPolicy> {
        let ids = self
            .referral
            .iter()
            .map(|r| self.category_id(r).ok_or_else(|| semantic(format!("referral: unknown category {r:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReferralPolicy::new(ids, self.categories.len())?)
    }

    pub fn hybrid(&self) -> HybridTrainCfg {
        HybridTrainCfg {
            preprocessing: self.preprocessing,
            caps_spec: self.caps_spec.clone(),
            caps: self.caps.clone(),
            dbn_specs: self.dbn_specs.clone(),
            dbn: self.dbn.clone(),
            fusion: self.fusion.clone(),
        }
    }

    /// Canonical text with every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", &self.seed);
        kv("categories", &self.categories.join(", "));
        kv("referral", &self.referral.join(", "));
        kv("split.validation_fraction", &self.validation_fraction);
        kv("synth.per_category", &self.synth_per_category);
        kv("input.channels", &self.input_channels);
        kv("input.extent", &self.input_extent);
        kv("preprocess.median_kernel", &self.preprocessing.median_kernel);
        kv("preprocess.eps", &self.preprocessing.eps);
        kv("augment.horizontal_flip", &self.augment.horizontal_flip);
        kv("augment.vertical_flip", &self.augment.vertical_flip);
        let rot: Vec<String> = self.augment.rotations.iter().map(|r| r.degrees().to_string()).collect();
        kv("augment.rotations", &rot.join(", "));
        match self.augment.crop_extent {
            Some(c) => kv("augment.crop_extent", &c),
            None => kv("augment.crop_extent", &"none"),
        }
        kv("augment.multiplier", &self.augment.multiplier);
        let c = &self.caps_spec;
        kv("caps.conv_filters", &c.conv_filters);
        kv("caps.conv_kernel", &c.conv_kernel);
        kv("caps.primary_groups", &c.primary_groups);
        kv("caps.primary_dim", &c.primary_dim);
        kv("caps.primary_kernel", &c.primary_kernel);
        kv("caps.primary_stride", &c.primary_stride);
        kv("caps.category_dim", &c.category_dim);
        kv("caps.routing_iters", &c.routing_iters);
        kv("caps.activation", &c.activation.name());
        kv("caps.learning_rate", &self.caps.learning_rate);
        kv("caps.mini_batch_size", &self.caps.mini_batch_size);
        kv("caps.margin_plus", &self.caps.loss.m_plus);
        kv("caps.margin_minus", &self.caps.loss.m_minus);
        kv("caps.margin_lambda", &self.caps.loss.lambda);
        kv("early_stop.patience", &self.caps.early_stop.patience);
        kv("early_stop.max_epochs", &self.caps.early_stop.max_epochs);
        kv("early_stop.min_delta", &self.caps.early_stop.min_delta);
        kv("dbn.layers", &self.dbn_specs.len());
        for (i, l) in self.dbn_specs.iter().enumerate() {
            let p = format!("dbn.l{}.", i + 1);
            kv(&format!("{p}visible_extent"), &l.visible_extent());
            kv(&format!("{p}groups"), &l.groups());
            kv(&format!("{p}filter_extent"), &l.filter_extent());
            kv(&format!("{p}pool_window"), &l.pool_window());
            kv(&format!("{p}hidden_extent"), &l.hidden_extent());
            kv(&format!("{p}pool_extent"), &l.pool_extent());
        }
        kv("dbn.learning_rate", &self.dbn.learning_rate);
        kv("dbn.mini_batch_size", &self.dbn.mini_batch_size);
        kv("dbn.epochs_per_layer", &self.dbn.epochs_per_layer);
        kv("dbn.cd_steps", &self.dbn.cd_steps);
        kv("dbn.weight_decay", &self.dbn.weight_decay);
        kv("fusion.learning_rate", &self.fusion.learning_rate);
        kv("fusion.epochs", &self.fusion.epochs);
        kv("fusion.mini_batch_size", &self.fusion.mini_batch_size);
        kv("fusion.tolerance", &self.fusion.tolerance);
        out
    }
}

fn parse_layers(e: &mut Entries, defaults: &[CrbmSpec], channels: usize, extent: usize) -> Result<Vec<CrbmSpec>> {
    let n: usize = e.take("dbn.layers", defaults.len())?;
    if n == 0 {
        return Err(semantic("dbn.layers must be at least 1"));
    }
    let mut specs: Vec<CrbmSpec> = Vec::with_capacity(n);
    for i in 1..=n {
        let p = format!("dbn.l{i}.");
        let def = defaults.get(i - 1);
        let (expected, visible_channels) = match specs.last() {
            None => (extent, channels),
            Some(prev) => (prev.pool_extent(), prev.groups()),
        };
        let visible_extent: usize = e.take(&format!("{p}visible_extent"), expected)?;
        let groups = e.take_or(&format!("{p}groups"), def.map(|d| d.groups()))?;
        let filter_extent = e.take_or(&format!("{p}filter_extent"), def.map(|d| d.filter_extent()))?;
        let pool_window = e.take_or(&format!("{p}pool_window"), def.map(|d| d.pool_window()))?;
        let hidden_extent = e.take_opt(&format!("{p}hidden_extent"), None)?;
        let pool_extent = e.take_opt(&format!("{p}pool_extent"), None)?;
        if visible_extent != expected {
            let keys = if i == 1 {
                "dbn.l1.visible_extent, input.extent".to_string()
            } else {
                format!("{p}visible_extent, dbn.l{}.pool_extent", i - 1)
            };
            return Err(geometry(&keys, format!("layer {i} visible extent {visible_extent} must equal {expected}")));
        }
        let spec = CrbmSpec::new(visible_extent, visible_channels, groups, filter_extent, pool_window)
            .and_then(|s| s.with_declared(hidden_extent, pool_extent))
            .map_err(|e| prefixed(&p, e))?;
        specs.push(spec);
    }
    Ok(specs)
}
