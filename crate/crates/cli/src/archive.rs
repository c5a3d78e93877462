//! Processed-patch archive: a directory holding `index.csv`, one raw
//! little-endian f32 file per patch under `patches/`, and
//! `whitening.cblf` with the statistics fitted on the training split.

use std::path::Path;

use capsdbn_core::preprocess::{ImagePatch, WhitenStats};
use capsdbn_core::Tensor;

use crate::checkpoint::{decode_whitening, encode_whitening, Checkpoint};
use crate::error::{CliError, Result};
use crate::fsio;

pub const INDEX_FILE: &str = "index.csv";
pub const WHITENING_FILE: &str = "whitening.cblf";
const INDEX_HEADER: [&str; 7] = ["file", "split", "label", "source_id", "channels", "height", "width"];

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub train: Vec<ImagePatch>,
    pub validation: Vec<ImagePatch>,
    pub whitening: WhitenStats,
}

fn arch(msg: impl Into<String>) -> CliError {
    CliError::Archive(msg.into())
}

pub fn write_archive(dir: &Path, archive: &Archive, config_text: &str) -> Result<()> {
    fsio::create_dir(&dir.join("patches"))?;
    let mut index = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| arch(e.to_string());
    index.write_record(INDEX_HEADER).map_err(csv_err)?;
    let rows = archive
        .train
        .iter()
        .map(|p| ("train", p))
        .chain(archive.validation.iter().map(|p| ("validation", p)));
    for (i, (split, p)) in rows.enumerate() {
        let file = format!("patches/{i:06}.f32");
        let bytes: Vec<u8> = p.pixels.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        fsio::write_atomic(&dir.join(&file), &bytes)?;
        let label = p.label.map(|l| l.to_string()).unwrap_or_default();
        let dims = [p.channels(), p.height(), p.width()].map(|d| d.to_string());
        index
            .write_record([file.as_str(), split, &label, &p.source_id, &dims[0], &dims[1], &dims[2]])
            .map_err(csv_err)?;
    }
    let bytes = index.into_inner().map_err(|e| arch(e.to_string()))?;
    fsio::write_atomic(&dir.join(INDEX_FILE), &bytes)?;
    encode_whitening(&archive.whitening, config_text).save(&dir.join(WHITENING_FILE))
}

pub fn read_archive(dir: &Path) -> Result<Archive> {
    let index_path = dir.join(INDEX_FILE);
    let bytes = fsio::read(&index_path)?;
    let mut rdr = csv::Reader::from_reader(&bytes[..]);
    let header = rdr.headers().map_err(|e| arch(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != INDEX_HEADER {
        return Err(arch(format!("{}: unexpected header", index_path.display())));
    }
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| arch(format!("{}: {e}", index_path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| arch(format!("{}:{line}: {what}", index_path.display()));
        let num = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(&format!("bad {}", INDEX_HEADER[i])));
        let shape = [num(4)?, num(5)?, num(6)?];
        let label = if rec[2].is_empty() { None } else { Some(num(2)?) };
        let raw = fsio::read(&dir.join(&rec[0]))?;
        if raw.len() != shape.iter().product::<usize>() * 4 {
            return Err(bad(&format!("{} has {} bytes, shape {shape:?}", &rec[0], raw.len())));
        }
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let pixels = Tensor::from_vec(&shape, data)?;
        pixels.ensure_finite(&rec[0])?;
        let patch = ImagePatch { pixels, label, source_id: rec[3].to_string() };
        match &rec[1] {
            "train" => train.push(patch),
            "validation" => validation.push(patch),
            s => return Err(bad(&format!("unknown split {s:?}"))),
        }
    }
    let whitening = decode_whitening(&Checkpoint::load(&dir.join(WHITENING_FILE))?)?;
    Ok(Archive { train, validation, whitening })
}
