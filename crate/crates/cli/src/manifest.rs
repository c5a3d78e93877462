//! Dataset manifest: CSV with header `path,label`.
//!
//! Relative paths resolve against the manifest's directory. Labels are
//! category names from the run configuration.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::fsio;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    /// 1-based line in the manifest file.
    pub line: usize,
    /// Path as written in the manifest.
    pub source: String,
    pub path: PathBuf,
    pub label: usize,
}

pub fn read_manifest(path: &Path, categories: &[String]) -> Result<Vec<ManifestRow>> {
    let bytes = fsio::read(path)?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let err = |line: usize, detail: String| CliError::Manifest { path: path.to_path_buf(), line, detail };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(&bytes[..]);
    let mut rows = Vec::new();
    let mut header_seen = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if !header_seen {
            if rec.iter().collect::<Vec<_>>() != ["path", "label"] {
                return Err(err(line, "header must be exactly `path,label`".into()));
            }
            header_seen = true;
            continue;
        }
        if rec.len() != 2 {
            return Err(err(line, format!("expected 2 fields, found {}", rec.len())));
        }
        let (p, label) = (&rec[0], &rec[1]);
        if p.is_empty() {
            return Err(err(line, "empty path".into()));
        }
        let label = categories
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| err(line, format!("unknown label {label:?}")))?;
        let full = base.join(p);
        if !full.is_file() {
            return Err(err(line, format!("no such file {}", full.display())));
        }
        rows.push(ManifestRow { line, source: p.to_string(), path: full, label });
    }
    if rows.is_empty() {
        return Err(err(1, "manifest has no rows".into()));
    }
    Ok(rows)
}

/// Manifest text for `(relative path, label name)` rows.
pub fn manifest_text<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| capsdbn_core::Error::Usage(e.to_string());
    w.write_record(["path", "label"]).map_err(csv_err)?;
    for (p, l) in rows {
        w.write_record([p, l]).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| capsdbn_core::Error::Usage(e.to_string()).into())
}
