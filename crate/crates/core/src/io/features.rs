//! Per-slide feature files: `patch_id,x,y,f0,...,f{D-1}`.

use std::collections::HashSet;
use std::path::Path;

use super::{csv_records, csv_write_err, csv_writer, finish_csv, format_f64, ingest_err, parse_f64, split_header};
use crate::error::{Error, Result};
use crate::spatial::PatchNode;

pub fn save_features(path: &Path, nodes: &[PatchNode]) -> Result<()> {
    let dim = nodes.first().map_or(0, |n| n.features.len());
    if let Some(n) = nodes.iter().find(|n| n.features.len() != dim) {
        return Err(Error::Shape(format!("patch {} has {} features, expected {dim}", n.id, n.features.len())));
    }
    let mut w = csv_writer();
    let mut header = vec!["patch_id".to_string(), "x".into(), "y".into()];
    header.extend((0..dim).map(|d| format!("f{d}")));
    w.write_record(&header).map_err(|e| csv_write_err(path, e))?;
    let mut row = Vec::with_capacity(dim + 3);
    for n in nodes {
        row.clear();
        row.push(n.id.to_string());
        row.push(format_f64(n.x));
        row.push(format_f64(n.y));
        row.extend(n.features.iter().map(|&v| format_f64(v)));
        w.write_record(&row).map_err(|e| csv_write_err(path, e))?;
    }
    finish_csv(path, w)
}

/// Patches in file order; the feature width is taken from the header.
pub fn load_features(path: &Path) -> Result<Vec<PatchNode>> {
    load(path).map(|(_, nodes)| nodes)
}

/// As [`load_features`], also checking the header width against the cohort's.
pub fn load_features_with_dim(path: &Path, dim: usize) -> Result<Vec<PatchNode>> {
    let (d, nodes) = load(path)?;
    if d != dim {
        return Err(ingest_err(path, 1, format!("file has {d} feature columns, the cohort declares {dim}")));
    }
    Ok(nodes)
}

fn load(path: &Path) -> Result<(usize, Vec<PatchNode>)> {
    let (header, rows) = split_header(path, csv_records(path)?)?;
    if header.len() < 3 || header[0] != "patch_id" || header[1] != "x" || header[2] != "y" {
        return Err(ingest_err(path, 1, "header must start with patch_id,x,y"));
    }
    for (d, name) in header[3..].iter().enumerate() {
        if *name != format!("f{d}") {
            return Err(ingest_err(path, 1, format!("expected column f{d}, found {name:?}")));
        }
    }
    let dim = header.len() - 3;
    let mut seen = HashSet::new();
    let mut nodes = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        if rec.len() != header.len() {
            return Err(ingest_err(
                path,
                line,
                format!("{} feature values, expected {dim}", rec.len().saturating_sub(3)),
            ));
        }
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| ingest_err(path, line, format!("patch_id {:?} is not a non-negative integer", &rec[0])))?;
        if !seen.insert(id) {
            return Err(ingest_err(path, line, format!("duplicate patch_id {id}")));
        }
        let x = parse_f64(path, line, "x", &rec[1])?;
        let y = parse_f64(path, line, "y", &rec[2])?;
        if x < 0.0 || y < 0.0 {
            return Err(ingest_err(path, line, format!("negative coordinate ({x}, {y})")));
        }
        let features = (0..dim)
            .map(|d| parse_f64(path, line, &header[d + 3], &rec[d + 3]))
            .collect::<Result<Vec<_>>>()?;
        nodes.push(PatchNode { id, x, y, features });
    }
    Ok((dim, nodes))
}

