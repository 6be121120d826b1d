//! Seeded synthetic cohorts with a planted spatial signal and planted DM blocks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use methylgraph::io::{save_dm_matrix, save_features, save_manifest, CohortManifest, ManifestPatient};
use methylgraph::labels::DmMatrix;
use methylgraph::nn::Matrix;
use methylgraph::spatial::PatchNode;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub patients: usize,
    pub slides_min: usize,
    pub slides_max: usize,
    pub patches_min: usize,
    pub patches_max: usize,
    pub grid_spacing_px: f64,
    pub feature_dim: usize,
    /// Fraction of a positive patient's patches that carry the signal.
    pub signal_fraction: f64,
    pub signal_shift: f64,
    pub positive_fraction: f64,
    /// Gene groups planted in the DM matrix.
    pub groups: usize,
    pub genes_per_group: usize,
    /// Group whose status drives the feature signal.
    pub signal_group: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            patients: 120,
            slides_min: 1,
            slides_max: 2,
            patches_min: 32,
            patches_max: 64,
            grid_spacing_px: 1024.0,
            feature_dim: 16,
            signal_fraction: 0.3,
            signal_shift: 2.0,
            positive_fraction: 0.5,
            groups: 2,
            genes_per_group: 20,
            signal_group: 0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.patients < 4 || self.feature_dim == 0 || self.groups == 0 || self.genes_per_group == 0 {
            return bad("patients must be at least 4 and feature_dim, groups, genes_per_group at least 1");
        }
        if self.slides_min == 0 || self.slides_min > self.slides_max {
            return bad("need 1 <= slides_min <= slides_max");
        }
        if self.patches_min == 0 || self.patches_min > self.patches_max {
            return bad("need 1 <= patches_min <= patches_max");
        }
        if !(0.0..=1.0).contains(&self.signal_fraction) {
            return bad("signal_fraction must lie in [0, 1]");
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad("positive_fraction must lie strictly between 0 and 1");
        }
        if !(self.grid_spacing_px > 0.0 && self.signal_shift.is_finite()) {
            return bad("grid_spacing_px must be positive and signal_shift finite");
        }
        if self.signal_group >= self.groups {
            return bad("signal_group must be below groups");
        }
        Ok(())
    }
}

pub fn group_name(g: usize) -> String {
    format!("group_{g}")
}

/// Paths written by [`synthesize`], relative to the output directory.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub dm_matrix: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Patch centroids of one slide: a compact tissue blob on the grid.
fn slide_layout(rng: &mut ChaCha8Rng, count: usize, spacing: f64) -> Vec<(f64, f64)> {
    let cols = (count as f64).sqrt().ceil() as usize + rng.random_range(0..3);
    let origin = (rng.random_range(1..8) as f64 * spacing, rng.random_range(1..8) as f64 * spacing);
    (0..count)
        .map(|i| (origin.0 + (i % cols) as f64 * spacing, origin.1 + (i / cols) as f64 * spacing))
        .collect()
}

/// Indices of the `k` patches nearest a random seed patch.
fn contiguous_region(rng: &mut ChaCha8Rng, xy: &[(f64, f64)], k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let s = xy[rng.random_range(0..xy.len())];
    let mut order: Vec<usize> = (0..xy.len()).collect();
    let d2 = |i: usize| (xy[i].0 - s.0).powi(2) + (xy[i].1 - s.1).powi(2);
    order.sort_by(|&a, &b| d2(a).total_cmp(&d2(b)).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Exactly `round(fraction·n)` positives (at least one of each class), shuffled.
fn planted_status(rng: &mut ChaCha8Rng, n: usize, fraction: f64) -> Vec<bool> {
    let pos = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut s: Vec<bool> = (0..n).map(|i| i < pos).collect();
    s.shuffle(rng);
    s
}

pub fn synthesize(spec: &SynthSpec, out: &Path) -> CliResult<SynthOutput> {
    spec.validate()?;
    let feat_dir = out.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| CliError::io(&feat_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut direction: Vec<f64> = (0..spec.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let status: Vec<Vec<bool>> = (0..spec.groups)
        .map(|_| planted_status(&mut rng, spec.patients, spec.positive_fraction))
        .collect();
    let width = (spec.patients - 1).to_string().len().max(3);
    let ids: Vec<String> = (0..spec.patients).map(|i| format!("SYN-{i:0width$}")).collect();

    let mut patients = Vec::with_capacity(spec.patients);
    let mut files = Vec::new();
    for (p, id) in ids.iter().enumerate() {
        // per-patient stream so patients are independent of each other's draws
        let mut prng = ChaCha8Rng::seed_from_u64(spec.seed);
        prng.set_stream(p as u64 + 1);
        let positive = status[spec.signal_group][p];
        let slides = prng.random_range(spec.slides_min..=spec.slides_max);
        let mut wsi_files = Vec::with_capacity(slides);
        for s in 0..slides {
            let count = prng.random_range(spec.patches_min..=spec.patches_max);
            let xy = slide_layout(&mut prng, count, spec.grid_spacing_px);
            let mut nodes: Vec<PatchNode> = xy
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| PatchNode {
                    id: i,
                    x,
                    y,
                    features: (0..spec.feature_dim).map(|_| StandardNormal.sample(&mut prng)).collect(),
                })
                .collect();
            let k = (spec.signal_fraction * count as f64).round() as usize;
            let region = contiguous_region(&mut prng, &xy, k);
            if positive {
                for i in region {
                    for (f, d) in nodes[i].features.iter_mut().zip(&direction) {
                        *f += spec.signal_shift * d;
                    }
                }
            }
            let rel = PathBuf::from("features").join(format!("{id}_s{s}.csv"));
            save_features(&out.join(&rel), &nodes)?;
            files.push(rel.clone());
            wsi_files.push(rel);
        }
        let labels: BTreeMap<String, u8> = (0..spec.groups).map(|g| (group_name(g), u8::from(status[g][p]))).collect();
        patients.push(ManifestPatient { patient_id: id.clone(), wsi_feature_files: wsi_files, labels });
    }

    let manifest = CohortManifest {
        cohort: format!("synthetic-{}", spec.seed),
        feature_dim: spec.feature_dim,
        patch_size_px: spec.grid_spacing_px,
        mpp: 0.5,
        patients,
        base_dir: out.to_path_buf(),
    };
    let manifest_path = PathBuf::from("manifest.json");
    save_manifest(&out.join(&manifest_path), &manifest)?;

    // DM blocks: group g sits around an ascending offset so groups keep their
    // planted order, with status moving the block up or down
    let n_genes = spec.groups * spec.genes_per_group;
    let genes: Vec<String> = (0..n_genes)
        .map(|j| format!("G{}_{:03}", j / spec.genes_per_group, j % spec.genes_per_group))
        .collect();
    let mut data = Vec::with_capacity(spec.patients * n_genes);
    for p in 0..spec.patients {
        for j in 0..n_genes {
            let g = j / spec.genes_per_group;
            let offset = g as f64 * 1.5 - 0.75 * (spec.groups - 1) as f64;
            let delta = if status[g][p] { 0.4 } else { -0.4 };
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(offset + delta + 0.1 * noise);
        }
    }
    let dm = DmMatrix::new(ids, genes, Matrix::from_vec(spec.patients, n_genes, data)?)?;
    let dm_path = PathBuf::from("dm_matrix.csv");
    save_dm_matrix(&out.join(&dm_path), &dm)?;

    files.push(manifest_path.clone());
    files.push(dm_path.clone());
    Ok(SynthOutput { manifest: manifest_path, dm_matrix: dm_path, files })
}
