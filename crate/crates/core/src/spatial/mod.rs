//! Per-slide spatial graphs over patch centroids.

mod delaunay;
mod graph;

pub use delaunay::{delaunay, in_circle, orient, Triangulation};
pub use graph::{build_graph, neighbor_lists, PatchNode, WsiGraph, DEFAULT_MAX_EDGE_PX};
