//! Image-level preprocessing: channel standardization, median filtering,
//! lossless augmentation and dataset-level whitening for the DBN branch.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{config_err, usage_err};
use crate::numerics::{RandomStream, Tensor};
use crate::Result;

/// Denominator guard used when a channel or position has zero variance.
pub const DEFAULT_EPS: f64 = 1e-8;

/// A `[C, H, W]` image with an optional category label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    pub pixels: Tensor<f32>,
    pub label: Option<usize>,
    pub source_id: String,
}

impl ImagePatch {
    /// Checks the ingestion contract: 3-d pixels, every value in `[0, 1]`.
    pub fn ingest(pixels: Tensor<f32>, label: Option<usize>, source_id: impl Into<String>) -> Result<Self> {
        if pixels.ndim() != 3 {
            return Err(config_err!("image must be [C, H, W], got {:?}", pixels.shape()));
        }
        if let Some(i) = pixels.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(config_err!("pixel {i} outside [0, 1]: {}", pixels.data()[i]));
        }
        Ok(Self {
            pixels,
            label,
            source_id: source_id.into(),
        })
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn check_label(&self, categories: usize) -> Result<()> {
        match self.label {
            Some(l) if l >= categories => Err(usage_err!(
                "{}: label {l} out of range for {categories} categories",
                self.source_id
            )),
            _ => Ok(()),
        }
    }

    fn with_pixels(&self, pixels: Tensor<f32>) -> Self {
        Self {
            pixels,
            label: self.label,
            source_id: self.source_id.clone(),
        }
    }
}

/// Per-image, per-channel zero mean / unit variance.
///
/// Uses the population standard deviation; channels with `std < eps` come
/// out as all zeros.
pub fn standardize_channels(p: &ImagePatch, eps: f64) -> Result<ImagePatch> {
    let (c, h, w) = (p.channels(), p.height(), p.width());
    let n = h * w;
    if n < 2 {
        return Err(config_err!("{}: standardization needs at least 2 pixels", p.source_id));
    }
    let mut out = p.pixels.clone();
    for ch in 0..c {
        let plane = out.outer_mut(ch);
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let denom = Float::sqrt(var).max(eps);
        for v in plane.iter_mut() {
            *v = ((*v as f64 - mean) / denom) as f32;
        }
    }
    Ok(p.with_pixels(out))
}

/// `k x k` median filter per channel with replicate padding at the borders.
pub fn median_filter(p: &ImagePatch, k: usize) -> Result<ImagePatch> {
    let (c, h, w) = (p.channels(), p.height(), p.width());
    if k.is_multiple_of(2) {
        return Err(config_err!("median window must be odd, got {k}"));
    }
    if k > h.min(w) {
        return Err(config_err!("median window {k} larger than image {h}x{w}"));
    }
    let r = (k / 2) as isize;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let src = p.pixels.data();
    let mut out = p.pixels.clone();
    let mut window = Vec::with_capacity(k * k);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                window.clear();
                for dy in -r..=r {
                    let yy = clamp(y as isize + dy, h);
                    for dx in -r..=r {
                        window.push(plane[yy * w + clamp(x as isize + dx, w)]);
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
                out.data_mut()[(ch * h + y) * w + x] = *m;
            }
        }
    }
    Ok(p.with_pixels(out))
}

/// Right-angle rotation, counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rotation {
    Deg90,
    Deg180,
    Deg270,
}

impl Rotation {
    pub fn degrees(self) -> u32 {
        match self {
            Rotation::Deg90 => 90,
            Rotation::Deg180 => 180,
            Rotation::Deg270 => 270,
        }
    }

    pub fn from_degrees(d: u32) -> Option<Self> {
        match d {
            90 => Some(Rotation::Deg90),
            180 => Some(Rotation::Deg180),
            270 => Some(Rotation::Deg270),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub rotations: Vec<Rotation>,
    /// Square crop size; the crop is resized back to the source extent.
    pub crop_extent: Option<usize>,
    /// Output copies per source image, the untouched original included.
    pub multiplier: usize,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            horizontal_flip: false,
            vertical_flip: false,
            rotations: Vec::new(),
            crop_extent: None,
            multiplier: 1,
            seed: 0,
        }
    }
}

/// A single lossless (or crop-and-resize) image transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate(Rotation),
    Crop { top: usize, left: usize, extent: usize },
}

impl Transform {
    pub fn tag(&self) -> String {
        match *self {
            Transform::Identity => "orig".into(),
            Transform::FlipHorizontal => "fliph".into(),
            Transform::FlipVertical => "flipv".into(),
            Transform::Rotate(r) => format!("rot{}", r.degrees()),
            Transform::Crop { top, left, extent } => format!("crop{extent}@{top},{left}"),
        }
    }

    pub fn apply(&self, pixels: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (c, h, w) = (pixels.shape()[0], pixels.shape()[1], pixels.shape()[2]);
        let src = pixels.data();
        let remap = |oh: usize, ow: usize, f: &dyn Fn(usize, usize) -> (usize, usize)| {
            let mut out = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        let (sy, sx) = f(y, x);
                        out.push(src[(ch * h + sy) * w + sx]);
                    }
                }
            }
            Tensor::from_vec(&[c, oh, ow], out)
        };
        match *self {
            Transform::Identity => Ok(pixels.clone()),
            Transform::FlipHorizontal => remap(h, w, &|y, x| (y, w - 1 - x)),
            Transform::FlipVertical => remap(h, w, &|y, x| (h - 1 - y, x)),
            Transform::Rotate(Rotation::Deg180) => remap(h, w, &|y, x| (h - 1 - y, w - 1 - x)),
            Transform::Rotate(r) => {
                if h != w {
                    return Err(config_err!("{}-degree rotation needs a square image, got {h}x{w}", r.degrees()));
                }
                match r {
                    Rotation::Deg90 => remap(h, w, &|y, x| (x, w - 1 - y)),
                    _ => remap(h, w, &|y, x| (h - 1 - x, y)),
                }
            }
            Transform::Crop { top, left, extent } => {
                if extent == 0 || top + extent > h || left + extent > w {
                    return Err(config_err!("crop {extent}@{top},{left} outside {h}x{w} image"));
                }
                remap(h, w, &|y, x| (top + y * extent / h, left + x * extent / w))
            }
        }
    }
}

fn draw_transform(spec: &AugmentSpec, h: usize, w: usize, stream: &mut RandomStream) -> Transform {
    let mut choices: Vec<Transform> = Vec::new();
    if spec.horizontal_flip {
        choices.push(Transform::FlipHorizontal);
    }
    if spec.vertical_flip {
        choices.push(Transform::FlipVertical);
    }
    choices.extend(spec.rotations.iter().map(|&r| Transform::Rotate(r)));
    let crop_slot = spec.crop_extent.map(|_| choices.len());
    if let Some(e) = spec.crop_extent {
        choices.push(Transform::Crop { top: 0, left: 0, extent: e });
    }
    if choices.is_empty() {
        return Transform::Identity;
    }
    let i = stream.below(choices.len());
    if Some(i) == crop_slot {
        let e = spec.crop_extent.unwrap_or(h.min(w));
        Transform::Crop {
            top: stream.below(h - e + 1),
            left: stream.below(w - e + 1),
            extent: e,
        }
    } else {
        choices[i]
    }
}

/// Expands every source image into `spec.multiplier` copies.
///
/// Copy 0 is the original; the others each get one transform drawn from the
/// enabled set. Output is source-major, labels are carried over and
/// `source_id` gains a `#aug<copy>-<tag>` suffix.
pub fn augment(batch: &[ImagePatch], spec: &AugmentSpec) -> Result<Vec<ImagePatch>> {
    if spec.multiplier == 0 {
        return Err(config_err!("augment multiplier must be at least 1"));
    }
    for p in batch {
        let (h, w) = (p.height(), p.width());
        if let Some(e) = spec.crop_extent {
            if e == 0 || e > h.min(w) {
                return Err(config_err!("crop extent {e} larger than {}x{} image {}", h, w, p.source_id));
            }
        }
        if h != w && spec.rotations.iter().any(|&r| r != Rotation::Deg180) {
            return Err(config_err!("right-angle rotations need square images; {} is {h}x{w}", p.source_id));
        }
    }
    let mut stream = RandomStream::new(spec.seed);
    let mut out = Vec::with_capacity(batch.len() * spec.multiplier);
    for p in batch {
        for copy in 0..spec.multiplier {
            let t = if copy == 0 {
                Transform::Identity
            } else {
                draw_transform(spec, p.height(), p.width(), &mut stream)
            };
            out.push(ImagePatch {
                pixels: t.apply(&p.pixels)?,
                label: p.label,
                source_id: format!("{}#aug{copy}-{}", p.source_id, t.tag()),
            });
        }
    }
    Ok(out)
}

/// Per-position statistics fitted on a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenStats {
    pub shape: [usize; 3],
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhitenStatus {
    Ok,
    /// Fewer than two images: every position had zero variance.
    Degenerate,
}

impl WhitenStats {
    pub fn fit(batch: &[ImagePatch], eps: f64) -> Result<Self> {
        let first = batch.first().ok_or_else(|| usage_err!("whitening needs a non-empty batch"))?;
        let shape = [first.channels(), first.height(), first.width()];
        let len = first.pixels.len();
        if let Some(p) = batch.iter().find(|p| p.pixels.shape() != shape) {
            return Err(config_err!("{}: shape {:?} differs from {:?}", p.source_id, p.pixels.shape(), shape));
        }
        let n = batch.len() as f64;
        let mut sum = vec![0f64; len];
        for p in batch {
            for (s, &v) in sum.iter_mut().zip(p.pixels.data()) {
                *s += v as f64;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0f64; len];
        for p in batch {
            for ((s, &v), m) in sq.iter_mut().zip(p.pixels.data()).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        Ok(Self {
            shape,
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: sq.iter().map(|&s| Float::sqrt(s / n) as f32).collect(),
            eps,
        })
    }

    /// Applies the saved transform; depends on nothing but `self` and `p`.
    pub fn apply(&self, p: &ImagePatch) -> Result<ImagePatch> {
        if p.pixels.shape() != self.shape {
            return Err(config_err!(
                "{}: shape {:?} differs from whitening shape {:?}",
                p.source_id,
                p.pixels.shape(),
                self.shape
            ));
        }
        let mut out = p.pixels.clone();
        for ((v, &m), &s) in out.data_mut().iter_mut().zip(&self.mean).zip(&self.std) {
            let d = (s as f64).max(self.eps);
            *v = ((*v as f64 - m as f64) / d) as f32;
        }
        Ok(p.with_pixels(out))
    }

    pub fn status(&self) -> WhitenStatus {
        if self.std.iter().all(|&s| (s as f64) < self.eps) {
            WhitenStatus::Degenerate
        } else {
            WhitenStatus::Ok
        }
    }
}

/// Fits per-position statistics on `batch` and whitens it with them.
pub fn whiten_for_dbn(batch: &[ImagePatch], eps: f64) -> Result<(Vec<ImagePatch>, WhitenStats, WhitenStatus)> {
    let stats = WhitenStats::fit(batch, eps)?;
    let out = batch.iter().map(|p| stats.apply(p)).collect::<Result<Vec<_>>>()?;
    let status = if batch.len() < 2 { WhitenStatus::Degenerate } else { stats.status() };
    Ok((out, stats, status))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(c: usize, h: usize, w: usize, f: impl FnMut(usize) -> f32) -> ImagePatch {
        ImagePatch::ingest(Tensor::from_fn(&[c, h, w], f), Some(0), "p").unwrap()
    }

    fn random_patch(seed: u64, c: usize, h: usize, w: usize) -> ImagePatch {
        let mut s = RandomStream::new(seed);
        patch(c, h, w, |_| s.next_f64() as f32)
    }

    #[test]
    fn ingest_rejects_out_of_range() {
        let t = Tensor::from_vec(&[1, 1, 2], vec![0.5, 1.5]).unwrap();
        assert!(ImagePatch::ingest(t, None, "x").is_err());
    }

    #[test]
    fn constant_channel_standardizes_to_zero() {
        let p = patch(1, 4, 4, |_| 0.7);
        let s = standardize_channels(&p, DEFAULT_EPS).unwrap();
        assert!(s.pixels.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_pixel_channel() {
        let p = ImagePatch::ingest(Tensor::from_vec(&[1, 1, 2], vec![0.0, 1.0]).unwrap(), None, "x").unwrap();
        let s = standardize_channels(&p, DEFAULT_EPS).unwrap();
        assert_eq!(s.pixels.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn standardization_matches_scalar_loop() {
        let p = random_patch(1, 3, 8, 8);
        let s = standardize_channels(&p, DEFAULT_EPS).unwrap();
        for ch in 0..3 {
            let vals = s.pixels.outer(ch);
            let mut mean = 0.0;
            for &v in vals {
                mean += v as f64;
            }
            mean /= 64.0;
            let mut var = 0.0;
            for &v in vals {
                var += (v as f64 - mean) * (v as f64 - mean);
            }
            let std = (var / 64.0).sqrt();
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((std - 1.0).abs() < 1e-5, "std {std}");
        }
        let again = standardize_channels(&s, DEFAULT_EPS).unwrap();
        for (a, b) in again.pixels.data().iter().zip(s.pixels.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn single_pixel_rejected() {
        let p = patch(1, 1, 1, |_| 0.2);
        assert!(standardize_channels(&p, DEFAULT_EPS).is_err());
    }

    #[test]
    fn median_of_isolated_spike_is_zero() {
        let p = patch(1, 5, 5, |i| if i == 12 { 1.0 } else { 0.0 });
        let m = median_filter(&p, 3).unwrap();
        assert!(m.pixels.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn median_constant_unchanged_and_even_rejected() {
        let p = patch(2, 6, 6, |_| 0.3);
        assert_eq!(median_filter(&p, 3).unwrap(), p);
        assert!(matches!(median_filter(&p, 4), Err(crate::Error::Config(_))));
        assert!(median_filter(&p, 7).is_err());
    }

    #[test]
    fn flips_are_involutions_and_rotations_compose() {
        let p = random_patch(3, 2, 5, 5);
        for t in [Transform::FlipHorizontal, Transform::FlipVertical, Transform::Rotate(Rotation::Deg180)] {
            let twice = t.apply(&t.apply(&p.pixels).unwrap()).unwrap();
            assert_eq!(twice, p.pixels);
        }
        let r90 = Transform::Rotate(Rotation::Deg90);
        let r270 = Transform::Rotate(Rotation::Deg270);
        assert_eq!(r270.apply(&r90.apply(&p.pixels).unwrap()).unwrap(), p.pixels);
        let four = (0..4).try_fold(p.pixels.clone(), |t, _| r90.apply(&t)).unwrap();
        assert_eq!(four, p.pixels);
    }

    #[test]
    fn rotate_ninety_moves_corner() {
        // top-right corner goes to top-left under a counter-clockwise turn
        let p = patch(1, 3, 3, |i| if i == 2 { 1.0 } else { 0.0 });
        let r = Transform::Rotate(Rotation::Deg90).apply(&p.pixels).unwrap();
        assert_eq!(r.data()[0], 1.0);
    }

    #[test]
    fn augment_identity_and_counts() {
        let batch: Vec<ImagePatch> = (0..10)
            .map(|i| {
                let mut p = random_patch(i, 1, 6, 6);
                p.label = Some((i % 3) as usize);
                p
            })
            .collect();
        let same = augment(&batch, &AugmentSpec::default()).unwrap();
        assert_eq!(same.len(), 10);
        for (a, b) in same.iter().zip(&batch) {
            assert_eq!(a.pixels, b.pixels);
            assert_eq!(a.label, b.label);
            assert!(a.source_id.starts_with(&b.source_id));
        }
        let spec = AugmentSpec {
            horizontal_flip: true,
            vertical_flip: true,
            rotations: vec![Rotation::Deg90, Rotation::Deg270],
            crop_extent: Some(4),
            multiplier: 4,
            seed: 99,
        };
        let out = augment(&batch, &spec).unwrap();
        assert_eq!(out.len(), 40);
        for label in 0..3 {
            let before = batch.iter().filter(|p| p.label == Some(label)).count();
            let after = out.iter().filter(|p| p.label == Some(label)).count();
            assert_eq!(after, 4 * before);
        }
        assert_eq!(out, augment(&batch, &spec).unwrap());
    }

    #[test]
    fn augment_rejects_bad_specs() {
        let batch = [random_patch(0, 1, 4, 6)];
        let crop = AugmentSpec { crop_extent: Some(5), ..Default::default() };
        assert!(augment(&batch, &crop).is_err());
        let rot = AugmentSpec { rotations: vec![Rotation::Deg90], ..Default::default() };
        assert!(augment(&batch, &rot).is_err());
        let zero = AugmentSpec { multiplier: 0, ..Default::default() };
        assert!(augment(&batch, &zero).is_err());
    }

    #[test]
    fn whitening_identical_images_is_zero() {
        let p = random_patch(5, 2, 4, 4);
        let (out, _, status) = whiten_for_dbn(&[p.clone(), p.clone(), p], DEFAULT_EPS).unwrap();
        assert_eq!(status, WhitenStatus::Degenerate);
        assert!(out.iter().all(|q| q.pixels.data().iter().all(|&v| v == 0.0)));
        let (_, _, single) = whiten_for_dbn(&[random_patch(6, 1, 3, 3)], DEFAULT_EPS).unwrap();
        assert_eq!(single, WhitenStatus::Degenerate);
        assert!(whiten_for_dbn(&[], DEFAULT_EPS).is_err());
    }

    #[test]
    fn whitening_two_images_removes_mean() {
        let a = random_patch(7, 1, 3, 3);
        let b = patch(1, 3, 3, |i| 1.0 - a.pixels.data()[i] * 0.5);
        let (out, stats, status) = whiten_for_dbn(&[a.clone(), b.clone()], DEFAULT_EPS).unwrap();
        assert_eq!(status, WhitenStatus::Ok);
        for i in 0..9 {
            let (x, y) = (a.pixels.data()[i] as f64, b.pixels.data()[i] as f64);
            let m = (x + y) / 2.0;
            assert!((stats.mean[i] as f64 - m).abs() < 1e-7);
            let (u, v) = (out[0].pixels.data()[i] as f64, out[1].pixels.data()[i] as f64);
            assert!((u + v).abs() < 1e-6);
            assert!((u.abs() - 1.0).abs() < 1e-5);
        }
        let replay: Vec<_> = [a, b].iter().map(|p| stats.apply(p).unwrap()).collect();
        assert_eq!(replay, out);
    }
}
