use std::collections::HashMap;

use super::delaunay::delaunay;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Default edge cutoff in level-0 pixels.
pub const DEFAULT_MAX_EDGE_PX: f64 = 4000.0;

/// One patch: centroid in level-0 pixels plus its feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchNode {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub features: Vec<f64>,
}

/// Undirected spatial graph over the patches of one slide. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct WsiGraph {
    slide_id: String,
    nodes: Vec<PatchNode>,
    edges: Vec<(usize, usize)>,
    feature_dim: usize,
    features: Matrix,
    neighbors: Vec<Vec<usize>>,
}

impl WsiGraph {
    /// Assembles a graph from explicit edges. Edges are stored as sorted
    /// `(lo, hi)` pairs; self-loops, duplicates and dangling indices are rejected.
    pub fn new(slide_id: impl Into<String>, nodes: Vec<PatchNode>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let feature_dim = validate_nodes(&nodes)?;
        let n = nodes.len();
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::Input(format!("edge ({a}, {b}) references a node outside 0..{n}")));
            }
            if a == b {
                return Err(Error::Input(format!("self-loop on node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Input(format!("duplicate edge {:?}", w[0])));
        }

        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &canon {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let mut data = Vec::with_capacity(n * feature_dim);
        for node in &nodes {
            data.extend_from_slice(&node.features);
        }
        let features = Matrix::from_vec(n, feature_dim, data)?;

        Ok(Self {
            slide_id: slide_id.into(),
            nodes,
            edges: canon,
            feature_dim,
            features,
            neighbors,
        })
    }

    pub fn slide_id(&self) -> &str {
        &self.slide_id
    }

    pub fn nodes(&self) -> &[PatchNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Sorted `(lo, hi)` pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Node features stacked row-wise in node order.
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Ascending neighbor indices of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Input("not a permutation of the node indices".into()));
        }
        let mut nodes = self.nodes.clone();
        for (old, node) in self.nodes.iter().enumerate() {
            nodes[perm[old]] = node.clone();
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Self::new(self.slide_id.clone(), nodes, edges)
    }

    /// Disjoint union; node indices of later graphs are offset by the sizes of earlier ones.
    pub fn disjoint_union(slide_id: impl Into<String>, graphs: &[&WsiGraph]) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for g in graphs {
            let offset = nodes.len();
            nodes.extend(g.nodes.iter().cloned());
            edges.extend(g.edges.iter().map(|&(a, b)| (a + offset, b + offset)));
        }
        Self::new(slide_id, nodes, edges)
    }
}

fn validate_nodes(nodes: &[PatchNode]) -> Result<usize> {
    let first = nodes
        .first()
        .ok_or_else(|| Error::Size("a graph needs at least one node".into()))?;
    let dim = first.features.len();
    for (i, node) in nodes.iter().enumerate() {
        if !(node.x.is_finite() && node.y.is_finite() && node.x >= 0.0 && node.y >= 0.0) {
            return Err(Error::Input(format!(
                "node {i} has invalid coordinates ({}, {})",
                node.x, node.y
            )));
        }
        if node.features.len() != dim {
            return Err(Error::Shape(format!(
                "node {i} has {} features, expected {dim}",
                node.features.len()
            )));
        }
        if node.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("node {i} has non-finite features")));
        }
    }
    Ok(dim)
}

/// Builds the spatial graph of one slide: Delaunay edges strictly shorter than `max_edge_px`.
///
/// Graphs of one or two nodes skip triangulation, and a fully collinear node
/// set is chained along the line, which is the degenerate Delaunay edge set.
pub fn build_graph(slide_id: impl Into<String>, nodes: Vec<PatchNode>, max_edge_px: f64) -> Result<WsiGraph> {
    if !(max_edge_px > 0.0) {
        return Err(Error::Input(format!("edge cutoff must be positive, got {max_edge_px}")));
    }
    validate_nodes(&nodes)?;
    check_unique_coordinates(&nodes)?;

    let points: Vec<(f64, f64)> = nodes.iter().map(|n| (n.x, n.y)).collect();
    let candidates = match points.len() {
        1 => Vec::new(),
        2 => vec![(0, 1)],
        _ => match delaunay(&points) {
            Ok(tri) => tri.edges(),
            Err(Error::DegenerateGeometry(_)) => collinear_chain(&points),
            Err(e) => return Err(e),
        },
    };
    let edges = candidates
        .into_iter()
        .filter(|&(a, b)| {
            let (dx, dy) = (points[a].0 - points[b].0, points[a].1 - points[b].1);
            dx.hypot(dy) < max_edge_px
        })
        .collect();
    WsiGraph::new(slide_id, nodes, edges)
}

fn check_unique_coordinates(nodes: &[PatchNode]) -> Result<()> {
    let mut first_seen: HashMap<(u64, u64), usize> = HashMap::new();
    let mut offenders = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        // +0.0 folds -0.0 into 0.0
        let key = ((n.x + 0.0).to_bits(), (n.y + 0.0).to_bits());
        if let Some(&j) = first_seen.get(&key) {
            offenders.push(format!("{i} duplicates {j} at ({}, {})", n.x, n.y));
        } else {
            first_seen.insert(key, i);
        }
    }
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(Error::Input(format!("duplicate coordinates: {}", offenders.join("; "))))
    }
}

fn collinear_chain(points: &[(f64, f64)]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap());
    order.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect()
}

/// Ascending adjacency list of every node.
pub fn neighbor_lists(graph: &WsiGraph) -> Vec<Vec<usize>> {
    graph.neighbors.clone()
}
