//! 8-bit PNG input and output.

use std::io::Cursor;
use std::path::Path;

use capsdbn_core::Tensor;
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{CliError, Result};
use crate::fsio;

fn image_err(path: &Path, detail: impl ToString) -> CliError {
    CliError::Image { path: path.to_path_buf(), detail: detail.to_string() }
}

/// Decodes a PNG into a `[channels, h, w]` tensor scaled to `[0, 1]`.
/// `channels` must be 1 (gray) or 3 (RGB); other color types are converted.
pub fn read_png(path: &Path, channels: usize) -> Result<Tensor<f32>> {
    let bytes = fsio::read(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u8> = match channels {
        1 => img.to_luma8().into_raw(),
        3 => img.to_rgb8().into_raw(),
        c => return Err(image_err(path, format!("unsupported channel count {c}"))),
    };
    let mut data = vec![0f32; channels * h * w];
    for (i, &v) in raw.iter().enumerate() {
        let (pix, c) = (i / channels, i % channels);
        data[c * h * w + pix] = v as f32 / 255.0;
    }
    Ok(Tensor::from_vec(&[channels, h, w], data)?)
}

/// Quantizes a `[c, h, w]` tensor in `[0, 1]` to 8 bits and encodes it as PNG.
pub fn encode_png(pixels: &Tensor<f32>) -> Result<Vec<u8>> {
    let &[c, h, w] = pixels.shape() else {
        return Err(capsdbn_core::Error::Usage(format!("expected a 3-d tensor, got {:?}", pixels.shape())).into());
    };
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut raw = vec![0u8; c * h * w];
    for (i, r) in raw.iter_mut().enumerate() {
        let (pix, ch) = (i / c, i % c);
        *r = q(pixels.data()[ch * h * w + pix]);
    }
    let img = match c {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w as u32, h as u32, raw).expect("sized buffer")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w as u32, h as u32, raw).expect("sized buffer")),
        _ => return Err(capsdbn_core::Error::Usage(format!("cannot encode {c} channels as PNG")).into()),
    };
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| capsdbn_core::Error::Usage(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn write_png(path: &Path, pixels: &Tensor<f32>) -> Result<()> {
    fsio::write_atomic(path, &encode_png(pixels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_values_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_fn(&[3, 4, 5], |i| (i * 7 % 256) as f32 / 255.0);
        let p = dir.path().join("x.png");
        write_png(&p, &t).unwrap();
        assert_eq!(read_png(&p, 3).unwrap(), t);
        let g = read_png(&p, 1).unwrap();
        assert_eq!(g.shape(), &[1, 4, 5]);
    }

    #[test]
    fn garbage_is_an_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert_eq!(read_png(&p, 3).unwrap_err().kind(), "image");
        assert_eq!(read_png(&dir.path().join("missing.png"), 3).unwrap_err().kind(), "io");
    }
}
