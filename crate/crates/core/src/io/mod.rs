//! On-disk formats: CSV for tables, JSON for documents, raw little-endian
//! floats for checkpoint parameters. Every writer emits LF line endings and
//! shortest round-trip float text, so equal data gives equal bytes.

mod checkpoint;
mod features;
mod graph;
mod heatmap;
mod manifest;
mod tables;

use std::fs;
use std::path::{Path, PathBuf};

pub use checkpoint::{load_checkpoint, save_checkpoint, Architecture, CheckpointHeader, LayerSpec, CHECKPOINT_VERSION};
pub use features::{load_features, load_features_with_dim, save_features};
pub use graph::{load_graph, save_graph, GRAPH_VERSION};
pub use heatmap::{export_heatmap, load_heatmap_csv, render_heatmap_png, sigmoid, HeatmapFiles, HeatmapRow};
pub use manifest::{load_manifest, save_manifest, CohortManifest, ManifestPatient};
pub use tables::{
    load_dm_matrix, load_folds, load_label_table, load_predictions, save_dm_matrix, save_folds, save_label_table,
    save_predictions, LabelTable,
};

use crate::error::{Error, Result};

/// Shortest text that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

pub(crate) fn finish_csv(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

pub(crate) fn csv_write_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Reader over a whole file; yields `(line, record)` pairs including the header.
pub(crate) fn csv_records(path: &Path) -> Result<Vec<Row>> {
    let bytes = read_bytes(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

pub(crate) fn ingest_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub(crate) fn parse_f64(path: &Path, line: u64, column: &str, text: &str) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| ingest_err(path, line, format!("column {column}: {text:?} is not a number")))?;
    if !v.is_finite() {
        return Err(ingest_err(path, line, format!("column {column}: non-finite value {text}")));
    }
    Ok(v)
}

/// CSV record with its 1-based line number.
pub(crate) type Row = (u64, csv::StringRecord);

/// Header record of a CSV file or an ingestion error at line 1.
pub(crate) fn split_header(path: &Path, records: Vec<Row>) -> Result<(Vec<String>, Vec<Row>)> {
    let mut it = records.into_iter();
    let Some((_, header)) = it.next() else {
        return Err(ingest_err(path, 1, "file is empty"));
    };
    Ok((header.iter().map(str::to_owned).collect(), it.collect()))
}
