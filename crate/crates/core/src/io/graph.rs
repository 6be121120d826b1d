//! Built graphs as JSON: nodes in file order with their features, plus the
//! sorted undirected edge list.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::spatial::{PatchNode, WsiGraph};

pub const GRAPH_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: usize,
    x: f64,
    y: f64,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    format_version: u32,
    slide_id: String,
    feature_dim: usize,
    nodes: Vec<NodeRecord>,
    edges: Vec<[usize; 2]>,
}

pub fn save_graph(path: &Path, graph: &WsiGraph) -> Result<()> {
    let record = GraphRecord {
        format_version: GRAPH_VERSION,
        slide_id: graph.slide_id().to_string(),
        feature_dim: graph.feature_dim(),
        nodes: graph
            .nodes()
            .iter()
            .map(|n| NodeRecord { id: n.id, x: n.x, y: n.y, features: n.features.clone() })
            .collect(),
        edges: graph.edges().iter().map(|&(a, b)| [a, b]).collect(),
    };
    let mut bytes = serde_json::to_vec(&record).map_err(|e| Error::Input(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_graph(path: &Path) -> Result<WsiGraph> {
    let corrupt = |message: String| Error::Corruption { path: path.to_path_buf(), message };
    let record: GraphRecord = serde_json::from_slice(&read_bytes(path)?).map_err(|e| corrupt(e.to_string()))?;
    if record.format_version != GRAPH_VERSION {
        return Err(corrupt(format!(
            "graph format version {} is not supported (expected {GRAPH_VERSION})",
            record.format_version
        )));
    }
    let nodes: Vec<PatchNode> = record
        .nodes
        .into_iter()
        .map(|n| PatchNode { id: n.id, x: n.x, y: n.y, features: n.features })
        .collect();
    if nodes.iter().any(|n| n.features.len() != record.feature_dim) {
        return Err(corrupt(format!("node feature width differs from declared {}", record.feature_dim)));
    }
    let edges = record.edges.into_iter().map(|[a, b]| (a, b)).collect();
    WsiGraph::new(record.slide_id, nodes, edges).map_err(|e| corrupt(e.to_string()))
}
