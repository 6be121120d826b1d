//! Model checkpoints.
//!
//! Layout: an 8-byte little-endian `u64` header length `N`, then `N` bytes of
//! UTF-8 JSON header, then exactly `param_count` little-endian `f64` values in
//! canonical parameter order (EdgeConv layers ascending, φ before scorer,
//! weight before bias, weights row-major `in × out`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::gnn::{BagAggregation, EdgeConvLayer, GnnModel};
use crate::nn::{Activation, Dense, Mlp, Parameters};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Shape of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub aggregation: BagAggregation,
    /// Dense layers of each EdgeConv φ.
    pub phi: Vec<Vec<LayerSpec>>,
    /// Dense layers of each per-layer scorer.
    pub scorers: Vec<Vec<LayerSpec>>,
}

fn specs(mlp: &Mlp) -> Vec<LayerSpec> {
    mlp.layers()
        .iter()
        .map(|d| LayerSpec { in_dim: d.in_dim(), out_dim: d.out_dim(), activation: d.activation })
        .collect()
}

fn zero_mlp(specs: &[LayerSpec]) -> Result<Mlp> {
    Mlp::new(specs.iter().map(|s| Dense::zeros(s.in_dim, s.out_dim, s.activation)).collect())
}

impl Architecture {
    pub fn of(model: &GnnModel) -> Self {
        Self {
            input_dim: model.input_dim(),
            aggregation: model.aggregation(),
            phi: model.layers().iter().map(|l| specs(l.phi())).collect(),
            scorers: model.scorers().iter().map(specs).collect(),
        }
    }

    /// Zero-initialized model of this shape.
    pub fn build(&self) -> Result<GnnModel> {
        let layers = self
            .phi
            .iter()
            .map(|s| EdgeConvLayer::new(zero_mlp(s)?))
            .collect::<Result<Vec<_>>>()?;
        let scorers = self.scorers.iter().map(|s| zero_mlp(s)).collect::<Result<Vec<_>>>()?;
        Ok(GnnModel::new(self.input_dim, layers, scorers)?.with_aggregation(self.aggregation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub architecture: Architecture,
    pub param_count: usize,
    pub seed: u64,
    /// Training configuration, stored verbatim.
    pub config: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, model: &GnnModel, seed: u64, config: serde_json::Value) -> Result<()> {
    let params = model.flat_params();
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        architecture: Architecture::of(model),
        param_count: params.len(),
        seed,
        config,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Input(e.to_string()))?;
    let mut bytes = Vec::with_capacity(8 + json.len() + 8 * params.len());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(GnnModel, CheckpointHeader)> {
    let corrupt = |message: String| Error::Corruption { path: path.to_path_buf(), message };
    let bytes = read_bytes(path)?;
    if bytes.len() < 8 {
        return Err(corrupt(format!("{} bytes is shorter than the length prefix", bytes.len())));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let body = &bytes[8..];
    if header_len > body.len() as u64 {
        return Err(corrupt(format!("header length {header_len} exceeds the remaining {} bytes", body.len())));
    }
    let (json, raw) = body.split_at(header_len as usize);
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    if raw.len() as u64 != header.param_count as u64 * 8 {
        return Err(corrupt(format!(
            "header declares {} parameters but the binary section holds {} bytes",
            header.param_count,
            raw.len()
        )));
    }
    let mut model = header.architecture.build().map_err(|e| corrupt(format!("bad architecture: {e}")))?;
    if model.param_count() != header.param_count {
        return Err(corrupt(format!(
            "architecture has {} parameters, header declares {}",
            model.param_count(),
            header.param_count
        )));
    }
    let params: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    model.set_flat_params(&params)?;
    Ok((model, header))
}
