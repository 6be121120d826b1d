//! Per-patient binary targets derived from a differential-methylation matrix.
//!
//! Genes are clustered on their per-patient DM profiles, each group is
//! summarized by its mean DM value per patient, and every group column is
//! binarized with a two-component Gaussian mixture (1 = higher-mean component).

mod cluster;
mod gmm;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use cluster::{cluster_columns, Dendrogram, Linkage, Merge};
pub use gmm::{em_from, fit_gmm, gmm_binarize, gmm_binarize_with, EmRun, Gmm, GmmOptions};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Patients × genes DM values: positive hyper-, negative hypo-, zero normally methylated.
#[derive(Debug, Clone, PartialEq)]
pub struct DmMatrix {
    patients: Vec<String>,
    genes: Vec<String>,
    values: Matrix,
}

impl DmMatrix {
    pub fn new(patients: Vec<String>, genes: Vec<String>, values: Matrix) -> Result<Self> {
        if values.shape() != (patients.len(), genes.len()) {
            return Err(Error::Shape(format!(
                "{} patients × {} genes but values are {}x{}",
                patients.len(),
                genes.len(),
                values.rows(),
                values.cols()
            )));
        }
        if let Some(d) = first_duplicate(&patients) {
            return Err(Error::Input(format!("duplicate patient id {d:?}")));
        }
        if let Some(d) = first_duplicate(&genes) {
            return Err(Error::Input(format!("duplicate gene name {d:?}")));
        }
        if !values.is_finite() {
            return Err(Error::Input("DM matrix contains non-finite values".into()));
        }
        Ok(Self { patients, genes, values })
    }

    pub fn patients(&self) -> &[String] {
        &self.patients
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Same data with patient rows reordered so row `i` is old row `order[i]`.
    pub fn reorder_patients(&self, order: &[usize]) -> Result<Self> {
        let patients = order.iter().map(|&i| self.patients[i].clone()).collect();
        Self::new(patients, self.genes.clone(), self.values.select_rows(order))
    }
}

fn first_duplicate(items: &[String]) -> Option<&String> {
    let mut seen = HashSet::new();
    items.iter().find(|s| !seen.insert(s.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneGrouping {
    pub k: usize,
    /// Group index of every gene, in gene order.
    pub assignment: Vec<usize>,
    pub dendrogram: Dendrogram,
}

impl GeneGrouping {
    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&g| self.assignment[g] == group).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupLabels {
    pub patients: Vec<String>,
    pub mean_dm: Matrix,
    /// Patients × groups of 0/1.
    pub binary: Vec<Vec<u8>>,
    pub gmms: Vec<Gmm>,
}

impl GroupLabels {
    pub fn group_count(&self) -> usize {
        self.gmms.len()
    }

    pub fn column(&self, group: usize) -> Vec<u8> {
        self.binary.iter().map(|row| row[group]).collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Ward clustering of gene columns cut into `k` groups, numbered by
/// ascending median DM value of the group's entries.
pub fn hier_cluster(dm: &DmMatrix, k: usize) -> Result<GeneGrouping> {
    hier_cluster_with(dm, k, Linkage::Ward)
}

pub fn hier_cluster_with(dm: &DmMatrix, k: usize, linkage: Linkage) -> Result<GeneGrouping> {
    let n = dm.genes.len();
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 genes, got {n}")));
    }
    if k == 0 || k > n {
        return Err(Error::Input(format!("group count {k} outside 1..={n}")));
    }
    let dendrogram = cluster_columns(&dm.values, linkage)?;
    let raw = dendrogram.cut(k)?;

    let mut keyed: Vec<(f64, usize, usize)> = (0..k)
        .map(|c| {
            let genes: Vec<usize> = (0..n).filter(|&g| raw[g] == c).collect();
            let mut vals: Vec<f64> = (0..dm.values.rows())
                .flat_map(|p| genes.iter().map(move |&g| (p, g)))
                .map(|(p, g)| dm.values.get(p, g))
                .collect();
            (median(&mut vals), genes[0], c)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut relabel = vec![0; k];
    for (new, &(_, _, old)) in keyed.iter().enumerate() {
        relabel[old] = new;
    }
    Ok(GeneGrouping {
        k,
        assignment: raw.iter().map(|&c| relabel[c]).collect(),
        dendrogram,
    })
}

/// Patients × groups matrix of mean DM value over each group's genes.
pub fn group_mean_dm(dm: &DmMatrix, grouping: &GeneGrouping) -> Result<Matrix> {
    if grouping.assignment.len() != dm.genes.len() {
        return Err(Error::Shape(format!(
            "grouping covers {} genes, matrix has {}",
            grouping.assignment.len(),
            dm.genes.len()
        )));
    }
    let mut counts = vec![0usize; grouping.k];
    for &g in &grouping.assignment {
        if g >= grouping.k {
            return Err(Error::Input(format!("group index {g} outside 0..{}", grouping.k)));
        }
        counts[g] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Input(format!("group {empty} has no genes")));
    }
    let rows = dm.values.rows();
    let mut out = Matrix::zeros(rows, grouping.k);
    for p in 0..rows {
        let row = dm.values.row(p);
        let o = out.row_mut(p);
        for (v, &g) in row.iter().zip(&grouping.assignment) {
            o[g] += v;
        }
        for (v, &c) in o.iter_mut().zip(&counts) {
            *v /= c as f64;
        }
    }
    Ok(out)
}

/// Clustering, group means and per-group binarization in one pass.
pub fn make_labels(dm: &DmMatrix, k: usize) -> Result<(GroupLabels, GeneGrouping)> {
    make_labels_with(dm, k, Linkage::Ward, &GmmOptions::default())
}

pub fn make_labels_with(dm: &DmMatrix, k: usize, linkage: Linkage, opts: &GmmOptions) -> Result<(GroupLabels, GeneGrouping)> {
    let grouping = hier_cluster_with(dm, k, linkage)?;
    let mean_dm = group_mean_dm(dm, &grouping)?;
    let mut binary = vec![vec![0u8; k]; mean_dm.rows()];
    let mut gmms = Vec::with_capacity(k);
    for g in 0..k {
        let column: Vec<f64> = (0..mean_dm.rows()).map(|p| mean_dm.get(p, g)).collect();
        let (labels, gmm) = gmm_binarize_with(&column, opts)?;
        for (row, l) in binary.iter_mut().zip(labels) {
            row[g] = l;
        }
        gmms.push(gmm);
    }
    Ok((
        GroupLabels {
            patients: dm.patients.clone(),
            mean_dm,
            binary,
            gmms,
        },
        grouping,
    ))
}
