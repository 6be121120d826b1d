//! Cohort manifest: one JSON document listing patients, their slide feature
//! files (relative to the manifest) and their per-group binary labels.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_string, write_atomic};
use crate::error::{Error, Result};

pub const DEFAULT_PATCH_SIZE_PX: f64 = 1024.0;
pub const DEFAULT_MPP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPatient {
    pub patient_id: String,
    pub wsi_feature_files: Vec<PathBuf>,
    #[serde(default)]
    pub labels: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub cohort: String,
    pub feature_dim: usize,
    #[serde(default = "default_patch_size")]
    pub patch_size_px: f64,
    #[serde(default = "default_mpp")]
    pub mpp: f64,
    pub patients: Vec<ManifestPatient>,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_patch_size() -> f64 {
    DEFAULT_PATCH_SIZE_PX
}

fn default_mpp() -> f64 {
    DEFAULT_MPP
}

impl CohortManifest {
    pub fn resolve(&self, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.base_dir.join(file)
        }
    }

    /// Checks ids, label values and that every referenced file exists,
    /// reporting all missing files at once.
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Input("feature_dim must be positive".into()));
        }
        if !(self.patch_size_px > 0.0 && self.mpp > 0.0) {
            return Err(Error::Input("patch_size_px and mpp must be positive".into()));
        }
        let mut ids = HashSet::new();
        let mut missing = Vec::new();
        for p in &self.patients {
            if !ids.insert(p.patient_id.as_str()) {
                return Err(Error::Input(format!("duplicate patient id {:?}", p.patient_id)));
            }
            if p.wsi_feature_files.is_empty() {
                return Err(Error::Input(format!("patient {:?} lists no feature files", p.patient_id)));
            }
            if let Some((g, v)) = p.labels.iter().find(|(_, &v)| v > 1) {
                return Err(Error::Input(format!("patient {:?}: label {g} = {v}, expected 0 or 1", p.patient_id)));
            }
            for f in &p.wsi_feature_files {
                let full = self.resolve(f);
                if !full.is_file() {
                    missing.push(full.display().to_string());
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Input(format!("missing feature files: {}", missing.join(", "))));
        }
        Ok(())
    }

    /// Labels of one group for every patient, erroring on gaps.
    pub fn group_labels(&self, group: &str) -> Result<Vec<bool>> {
        let lacking: Vec<&str> = self
            .patients
            .iter()
            .filter(|p| !p.labels.contains_key(group))
            .map(|p| p.patient_id.as_str())
            .collect();
        if !lacking.is_empty() {
            return Err(Error::Input(format!("no {group:?} label for patients {}", lacking.join(", "))));
        }
        Ok(self.patients.iter().map(|p| p.labels[group] == 1).collect())
    }
}

pub fn load_manifest(path: &Path) -> Result<CohortManifest> {
    let text = read_string(path)?;
    let mut m: CohortManifest = serde_json::from_str(&text).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate()?;
    Ok(m)
}

pub fn save_manifest(path: &Path, manifest: &CohortManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Input(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
