#![allow(dead_code)]

use std::sync::Arc;

use methylgraph::gnn::{GnnModel, PatientBag};
use methylgraph::nn::{Activation, Mlp, Parameters};
use methylgraph::spatial::{build_graph, PatchNode, WsiGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random jittered-grid slide with `n` nodes and Gaussian-ish features.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> WsiGraph {
    let side = (n as f64).sqrt().ceil() as usize + 1;
    let mut cells: Vec<usize> = (0..side * side).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    let nodes = cells[..n]
        .iter()
        .enumerate()
        .map(|(id, &c)| PatchNode {
            id,
            x: (c % side) as f64 * 1024.0 + 512.0 + rng.random_range(-40.0..40.0),
            y: (c / side) as f64 * 1024.0 + 512.0 + rng.random_range(-40.0..40.0),
            features: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    build_graph("rand", nodes, 4000.0).unwrap()
}

/// Scalar-loop φ evaluation on an explicit concatenated input.
pub fn mlp_oracle(mlp: &Mlp, input: &[f64]) -> Vec<f64> {
    let mut a = input.to_vec();
    for layer in mlp.layers() {
        let mut next = vec![0.0; layer.out_dim()];
        for (j, out) in next.iter_mut().enumerate() {
            let mut s = layer.bias[j];
            for (i, ai) in a.iter().enumerate() {
                s += ai * layer.weight.get(i, j);
            }
            *out = match layer.activation {
                Activation::Relu => s.max(0.0),
                Activation::Identity => s,
            };
        }
        a = next;
    }
    a
}

/// EdgeConv by iterating the edge list explicitly and applying φ per directed edge.
pub fn edgeconv_oracle(phi: &Mlp, graph: &WsiGraph, h: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let out_dim = phi.out_dim();
    let mut out = vec![vec![0.0; out_dim]; graph.node_count()];
    for &(a, b) in graph.edges() {
        for (i, j) in [(a, b), (b, a)] {
            let mut input = h[i].clone();
            input.extend(h[j].iter().zip(&h[i]).map(|(hj, hi)| hj - hi));
            for (o, m) in out[i].iter_mut().zip(mlp_oracle(phi, &input)) {
                *o += m;
            }
        }
    }
    out
}

/// Node predictions composed from the two oracles above.
pub fn node_scores_oracle(model: &GnnModel, graph: &WsiGraph) -> Vec<f64> {
    let mut h: Vec<Vec<f64>> = graph.nodes().iter().map(|n| n.features.clone()).collect();
    let mut total = vec![0.0; graph.node_count()];
    for (layer, scorer) in model.layers().iter().zip(model.scorers()) {
        h = edgeconv_oracle(layer.phi(), graph, &h);
        for (t, hi) in total.iter_mut().zip(&h) {
            *t += mlp_oracle(scorer, hi)[0];
        }
    }
    total
}

/// Central finite differences of `f` over every parameter of `model`.
pub fn finite_difference<P: Parameters + Clone>(model: &P, h: f64, mut f: impl FnMut(&P) -> f64) -> Vec<f64> {
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        probe.set_flat_params(&p).unwrap();
        let up = f(&probe);
        p[k] = base[k] - h;
        probe.set_flat_params(&p).unwrap();
        let down = f(&probe);
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Max relative error with an absolute floor for near-zero entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn bag_of(graphs: Vec<WsiGraph>, label: bool) -> PatientBag {
    PatientBag::new("p", graphs.into_iter().map(Arc::new).collect(), label).unwrap()
}
