//! Synthetic stand-in for a labelled lesion-patch dataset.
//!
//! Category `c` of `K` gets its own base hue, stripe orientation, stripe
//! frequency, textured channel and blob shape. Per-image jitter (phase,
//! blob placement, color, pixel noise) comes from the seeded stream.

use alloc::format;
use alloc::vec::Vec;

use core::f64::consts::PI;
use num_traits::Float;

use crate::error::config_err;
use crate::numerics::{RandomStream, Tensor};
use crate::preprocess::ImagePatch;
use crate::Result;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.fract() + 1.0).fract() * 6.0;
    let i = Float::floor(h6) as usize % 6;
    let f = h6 - Float::floor(h6);
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Whether `(dy, dx)` (relative to the blob centre) lies inside blob `shape`.
fn in_blob(shape: usize, dy: f64, dx: f64, r: f64) -> bool {
    match shape % 5 {
        0 => dy * dy + dx * dx <= r * r,
        1 => dy.abs() <= r * 0.8 && dx.abs() <= r * 0.8,
        2 => {
            let d = Float::sqrt(dy * dy + dx * dx);
            d <= r && d >= r * 0.55
        }
        3 => (dy.abs() <= r * 0.25 && dx.abs() <= r) || (dx.abs() <= r * 0.25 && dy.abs() <= r),
        _ => dy.abs() + dx.abs() <= r,
    }
}

/// `k * per_category` RGB patches of `extent x extent`, category-major.
pub fn synth_dataset(k: usize, per_category: usize, extent: usize, seed: u64) -> Result<Vec<ImagePatch>> {
    if extent < 16 {
        return Err(config_err!("synthetic extent must be at least 16, got {extent}"));
    }
    if k == 0 {
        return Err(config_err!("synthetic dataset needs at least one category"));
    }
    let root = RandomStream::new(seed);
    let mut out = Vec::with_capacity(k * per_category);
    for c in 0..k {
        let mut s = root.fork(c as u64);
        let base = hsv_to_rgb(c as f64 / k as f64, 0.55, 0.75);
        let theta0 = PI * c as f64 / k as f64;
        let freq0 = 2.0 + 1.5 * c as f64;
        for n in 0..per_category {
            let jitter: [f64; 3] = core::array::from_fn(|_| s.uniform(-0.05, 0.05));
            let theta = theta0 + s.uniform(-0.08, 0.08);
            let freq = freq0 * s.uniform(0.9, 1.1);
            let phase = s.uniform(0.0, 2.0 * PI);
            let (cy, cx) = (
                s.uniform(0.3, 0.7) * extent as f64,
                s.uniform(0.3, 0.7) * extent as f64,
            );
            let radius = extent as f64 * s.uniform(0.16, 0.24);
            let (ct, st) = (Float::cos(theta), Float::sin(theta));
            let mut pixels = Vec::with_capacity(3 * extent * extent);
            for ch in 0..3 {
                let amp = if ch == c % 3 { 0.22 } else { 0.08 };
                for y in 0..extent {
                    for x in 0..extent {
                        let (yf, xf) = (y as f64, x as f64);
                        let u = (xf * ct + yf * st) / extent as f64;
                        let mut v = base[ch] + jitter[ch] + amp * Float::sin(2.0 * PI * freq * u + phase);
                        if in_blob(c, yf - cy, xf - cx, radius) {
                            v = 0.5 * v + 0.5 * (1.0 - base[ch]);
                        }
                        v += 0.03 * s.normal();
                        pixels.push(v.clamp(0.0, 1.0) as f32);
                    }
                }
            }
            let t = Tensor::from_vec(&[3, extent, extent], pixels)?;
            out.push(ImagePatch::ingest(t, Some(c), format!("synth-c{c}-{n:04}"))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let a = synth_dataset(5, 20, 16, 7).unwrap();
        assert_eq!(a.len(), 100);
        for c in 0..5 {
            assert_eq!(a.iter().filter(|p| p.label == Some(c)).count(), 20);
        }
        assert_eq!(a, synth_dataset(5, 20, 16, 7).unwrap());
        assert_ne!(a, synth_dataset(5, 20, 16, 8).unwrap());
    }

    #[test]
    fn small_extent_rejected() {
        assert!(synth_dataset(5, 1, 15, 0).is_err());
    }

    #[test]
    fn blob_shapes_differ() {
        let r = 5.0;
        let pts = [(0.0, 0.0), (3.8, 3.8), (0.0, 4.0), (4.5, 0.5), (2.0, 2.0), (3.0, 3.0)];
        let sigs: Vec<Vec<bool>> = (0..5).map(|s| pts.iter().map(|&(y, x)| in_blob(s, y, x, r)).collect()).collect();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(sigs[i], sigs[j], "shapes {i} and {j}");
            }
        }
    }
}
