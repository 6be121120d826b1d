//! Small CSV tables: DM matrices, group labels, fold assignments and predictions.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use super::{csv_records, csv_write_err, csv_writer, finish_csv, format_f64, ingest_err, parse_f64, split_header};
use crate::error::{Error, Result};
use crate::labels::DmMatrix;
use crate::nn::Matrix;
use crate::training::{FoldSplit, Prediction};

fn expect_header(path: &Path, header: &[String], expected: &[&str]) -> Result<()> {
    if header != expected {
        return Err(ingest_err(path, 1, format!("header must be {}", expected.join(","))));
    }
    Ok(())
}

fn check_width(path: &Path, line: u64, rec: &csv::StringRecord, width: usize) -> Result<()> {
    if rec.len() != width {
        return Err(ingest_err(path, line, format!("{} fields, expected {width}", rec.len())));
    }
    Ok(())
}

fn parse_bit(path: &Path, line: u64, column: &str, text: &str) -> Result<u8> {
    match text.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(ingest_err(path, line, format!("column {column}: {other:?} is not 0 or 1"))),
    }
}

fn unique_id<'a>(path: &Path, line: u64, seen: &mut HashSet<String>, id: &'a str) -> Result<&'a str> {
    if !seen.insert(id.to_string()) {
        return Err(ingest_err(path, line, format!("duplicate patient_id {id:?}")));
    }
    Ok(id)
}

/// `patient_id,<gene>...`, one row per patient.
pub fn save_dm_matrix(path: &Path, dm: &DmMatrix) -> Result<()> {
    let mut w = csv_writer();
    let mut header = vec!["patient_id".to_string()];
    header.extend(dm.genes().iter().cloned());
    w.write_record(&header).map_err(|e| csv_write_err(path, e))?;
    for (p, id) in dm.patients().iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(dm.values().row(p).iter().map(|&v| format_f64(v)));
        w.write_record(&row).map_err(|e| csv_write_err(path, e))?;
    }
    finish_csv(path, w)
}

pub fn load_dm_matrix(path: &Path) -> Result<DmMatrix> {
    let (header, rows) = split_header(path, csv_records(path)?)?;
    if header.first().map(String::as_str) != Some("patient_id") || header.len() < 2 {
        return Err(ingest_err(path, 1, "header must be patient_id followed by gene names"));
    }
    let genes: Vec<String> = header[1..].to_vec();
    let mut seen = HashSet::new();
    let mut patients = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * genes.len());
    for (line, rec) in rows {
        check_width(path, line, &rec, header.len())?;
        patients.push(unique_id(path, line, &mut seen, &rec[0])?.to_string());
        for (g, gene) in genes.iter().enumerate() {
            data.push(parse_f64(path, line, gene, &rec[g + 1])?);
        }
    }
    let values = Matrix::from_vec(patients.len(), genes.len(), data)?;
    DmMatrix::new(patients, genes, values)
}

/// Patients × groups table of 0/1 labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    pub groups: Vec<String>,
    pub patients: Vec<String>,
    pub values: Vec<Vec<u8>>,
}

impl LabelTable {
    pub fn group_index(&self, group: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g == group)
            .ok_or_else(|| Error::Input(format!("no group {group:?}; available: {}", self.groups.join(", "))))
    }

    /// Label of `patient` in `group`, if present.
    pub fn get(&self, patient: &str, group: usize) -> Option<bool> {
        self.patients.iter().position(|p| p == patient).map(|i| self.values[i][group] == 1)
    }

    pub fn as_map(&self, group: usize) -> BTreeMap<String, bool> {
        self.patients
            .iter()
            .zip(&self.values)
            .map(|(p, row)| (p.clone(), row[group] == 1))
            .collect()
    }
}

pub fn save_label_table(path: &Path, table: &LabelTable) -> Result<()> {
    let mut w = csv_writer();
    let mut header = vec!["patient_id".to_string()];
    header.extend(table.groups.iter().cloned());
    w.write_record(&header).map_err(|e| csv_write_err(path, e))?;
    for (id, row) in table.patients.iter().zip(&table.values) {
        if row.len() != table.groups.len() {
            return Err(Error::Shape(format!("patient {id} has {} labels for {} groups", row.len(), table.groups.len())));
        }
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(u8::to_string));
        w.write_record(&rec).map_err(|e| csv_write_err(path, e))?;
    }
    finish_csv(path, w)
}

pub fn load_label_table(path: &Path) -> Result<LabelTable> {
    let (header, rows) = split_header(path, csv_records(path)?)?;
    if header.first().map(String::as_str) != Some("patient_id") || header.len() < 2 {
        return Err(ingest_err(path, 1, "header must be patient_id followed by group names"));
    }
    let groups = header[1..].to_vec();
    let mut seen = HashSet::new();
    let mut patients = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rows {
        check_width(path, line, &rec, header.len())?;
        patients.push(unique_id(path, line, &mut seen, &rec[0])?.to_string());
        values.push(
            groups
                .iter()
                .enumerate()
                .map(|(g, name)| parse_bit(path, line, name, &rec[g + 1]))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(LabelTable { groups, patients, values })
}

/// `patient_id,fold` in ascending patient-id order.
pub fn save_folds(path: &Path, split: &FoldSplit) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(["patient_id", "fold"]).map_err(|e| csv_write_err(path, e))?;
    for (id, fold) in &split.assignment {
        w.write_record([id.as_str(), &fold.to_string()]).map_err(|e| csv_write_err(path, e))?;
    }
    finish_csv(path, w)
}

/// Reads a fold file; the fold count is one more than the largest index and
/// every fold below it must be non-empty.
pub fn load_folds(path: &Path) -> Result<FoldSplit> {
    let (header, rows) = split_header(path, csv_records(path)?)?;
    expect_header(path, &header, &["patient_id", "fold"])?;
    let mut seen = HashSet::new();
    let mut assignment = BTreeMap::new();
    for (line, rec) in rows {
        check_width(path, line, &rec, 2)?;
        let id = unique_id(path, line, &mut seen, &rec[0])?.to_string();
        let fold: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| ingest_err(path, line, format!("fold {:?} is not a non-negative integer", &rec[1])))?;
        assignment.insert(id, fold);
    }
    let folds = assignment.values().max().map_or(0, |m| m + 1);
    let split = FoldSplit { folds, assignment };
    if let Some(empty) = (0..folds).find(|&k| split.members(k).is_empty()) {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            message: format!("fold {empty} has no patients"),
        });
    }
    Ok(split)
}

/// `patient_id,fold,label,score`.
pub fn save_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(["patient_id", "fold", "label", "score"]).map_err(|e| csv_write_err(path, e))?;
    for p in predictions {
        w.write_record([
            p.patient_id.as_str(),
            &p.fold.to_string(),
            if p.label { "1" } else { "0" },
            &format_f64(p.score),
        ])
        .map_err(|e| csv_write_err(path, e))?;
    }
    finish_csv(path, w)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let (header, rows) = split_header(path, csv_records(path)?)?;
    expect_header(path, &header, &["patient_id", "fold", "label", "score"])?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        check_width(path, line, &rec, 4)?;
        let patient_id = unique_id(path, line, &mut seen, &rec[0])?.to_string();
        let fold = rec[1]
            .trim()
            .parse()
            .map_err(|_| ingest_err(path, line, format!("fold {:?} is not a non-negative integer", &rec[1])))?;
        let label = parse_bit(path, line, "label", &rec[2])? == 1;
        let score = parse_f64(path, line, "score", &rec[3])?;
        out.push(Prediction { patient_id, fold, label, score });
    }
    Ok(out)
}
