mod common;

use std::sync::Arc;

use common::*;
use methylgraph::gnn::{EdgeConvLayer, GnnModel, PatientBag};
use methylgraph::nn::{Activation, Dense, Matrix, Mlp, Parameters};
use methylgraph::spatial::{PatchNode, WsiGraph};
use rand::Rng;

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn randomize_biases<P: Parameters>(model: &mut P, rng: &mut rand_chacha::ChaCha8Rng) {
    let names = model.param_names();
    for (name, t) in names.iter().zip(model.param_tensors_mut()) {
        if name.ends_with("bias") {
            for v in t.iter_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
}

#[test]
fn edgeconv_matches_explicit_edge_loop() {
    let mut r = rng(11);
    for _ in 0..5 {
        let g = random_graph(&mut r, 10, 4);
        let mut layer = EdgeConvLayer::glorot(4, 6, &mut r);
        randomize_biases(layer.phi_mut(), &mut r);
        let got = layer.forward(&g, g.features()).unwrap();
        let want = edgeconv_oracle(layer.phi(), &g, &rows(g.features()));
        for (a, b) in rows(&got).iter().flatten().zip(want.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn edgeconv_with_deep_and_shallow_phi_matches_oracle() {
    let mut r = rng(12);
    let g = random_graph(&mut r, 12, 3);
    for dims in [vec![6, 5], vec![6, 7, 5, 4], vec![6, 8, 8, 8, 2]] {
        let mut phi = Mlp::glorot(&dims, &mut r).unwrap();
        randomize_biases(&mut phi, &mut r);
        let layer = EdgeConvLayer::new(phi).unwrap();
        let got = layer.forward(&g, g.features()).unwrap();
        let want = edgeconv_oracle(layer.phi(), &g, &rows(g.features()));
        for (a, b) in rows(&got).iter().flatten().zip(want.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn edgeconv_is_permutation_equivariant() {
    let mut r = rng(13);
    let g = random_graph(&mut r, 10, 3);
    let layer = EdgeConvLayer::glorot(3, 5, &mut r);
    let mut perm: Vec<usize> = (0..10).collect();
    for i in (1..10).rev() {
        perm.swap(i, r.random_range(0..=i));
    }
    let pg = g.permuted(&perm).unwrap();
    let out = layer.forward(&g, g.features()).unwrap();
    let pout = layer.forward(&pg, pg.features()).unwrap();
    for old in 0..10 {
        for (a, b) in out.row(old).iter().zip(pout.row(perm[old])) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn node_predictions_match_composed_oracles() {
    let mut r = rng(14);
    let mut model = GnnModel::glorot(5, &[6, 6, 6], &mut r).unwrap();
    randomize_biases(&mut model, &mut r);
    let g = random_graph(&mut r, 15, 5);
    let got = model.node_predictions(&g).unwrap().total;
    let want = node_scores_oracle(&model, &g);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
    let sum: f64 = got.iter().sum();
    assert!((model.graph_score(&g).unwrap() - sum).abs() <= 1e-9);
}

#[test]
fn doubled_components_double_the_score() {
    let mut r = rng(15);
    let model = GnnModel::glorot(4, &[5, 5, 5], &mut r).unwrap();
    let g = random_graph(&mut r, 9, 4);
    let doubled = WsiGraph::disjoint_union("d", &[&g, &g]).unwrap();
    let s = model.graph_score(&g).unwrap();
    assert!((model.graph_score(&doubled).unwrap() - 2.0 * s).abs() <= 1e-9 * s.abs().max(1.0));
}

#[test]
fn patient_score_equals_disjoint_union_score() {
    let mut r = rng(16);
    let model = GnnModel::glorot(4, &[5, 5, 5], &mut r).unwrap();
    let graphs: Vec<WsiGraph> = (0..3).map(|k| random_graph(&mut r, 6 + 3 * k, 4)).collect();
    let union = WsiGraph::disjoint_union("u", &graphs.iter().collect::<Vec<_>>()).unwrap();
    let bag = bag_of(graphs.clone(), true);
    assert!((model.patient_score(&bag).unwrap() - model.graph_score(&union).unwrap()).abs() <= 1e-9);

    let single = bag_of(vec![graphs[0].clone()], true);
    assert_eq!(model.patient_score(&single).unwrap(), model.graph_score(&graphs[0]).unwrap());
    let twice = bag_of(vec![graphs[0].clone(), graphs[0].clone()], true);
    assert_eq!(model.patient_score(&twice).unwrap(), 2.0 * model.graph_score(&graphs[0]).unwrap());
}

#[test]
fn isolated_nodes_score_only_scorer_biases() {
    let mut r = rng(17);
    let mut model = GnnModel::glorot(3, &[4, 4, 4], &mut r).unwrap();
    randomize_biases(&mut model, &mut r);
    let nodes = vec![
        PatchNode { id: 0, x: 0.0, y: 0.0, features: vec![0.3, -1.0, 2.0] },
        PatchNode { id: 1, x: 9000.0, y: 0.0, features: vec![1.0, 1.0, 1.0] },
    ];
    let g = WsiGraph::new("iso", nodes, vec![]).unwrap();
    let bias_sum: f64 = model.scorers().iter().map(|s| s.layers()[0].bias[0]).sum();
    for v in model.node_predictions(&g).unwrap().total {
        assert!((v - bias_sum).abs() <= 1e-15);
    }
}

#[test]
fn doubling_scorer_weights_doubles_score() {
    let mut r = rng(18);
    let model = GnnModel::glorot(4, &[5, 5, 5], &mut r).unwrap();
    let g = random_graph(&mut r, 12, 4);
    let mut doubled = model.clone();
    for s in doubled.scorers_mut() {
        for l in s.layers_mut() {
            for w in l.weight.data_mut() {
                *w *= 2.0;
            }
        }
    }
    // biases are zero at init, so the scorer output scales exactly
    let s = model.graph_score(&g).unwrap();
    assert!((doubled.graph_score(&g).unwrap() - 2.0 * s).abs() <= 1e-9 * s.abs().max(1.0));
}

#[test]
fn graph_score_is_permutation_invariant() {
    let mut r = rng(19);
    let model = GnnModel::glorot(4, &[8, 8, 8], &mut r).unwrap();
    for _ in 0..10 {
        let n = r.random_range(2..25);
        let g = random_graph(&mut r, n, 4);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let a = model.graph_score(&g).unwrap();
        let b = model.graph_score(&g.permuted(&perm).unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn model_gradients_match_finite_differences() {
    let mut r = rng(20);
    for trial in 0..4 {
        let mut model = GnnModel::glorot(3, &[4, 5, 3], &mut r).unwrap();
        randomize_biases(&mut model, &mut r);
        let graphs = (0..1 + trial % 2).map(|_| random_graph(&mut r, 7, 3)).collect();
        let bag = bag_of(graphs, true);
        let upstream = 0.7;
        let analytic = model.model_gradients(&bag, upstream).unwrap().flat();
        let numeric = finite_difference(&model, 1e-5, |m| upstream * m.patient_score(&bag).unwrap());
        let err = max_rel_err(&analytic, &numeric, 1e-6);
        assert!(err <= 1e-5, "trial {trial}: relative error {err}");
    }
}

#[test]
fn gradients_through_deep_phi_match_finite_differences() {
    let mut r = rng(21);
    let phi0 = Mlp::glorot(&[6, 5, 4, 4], &mut r).unwrap();
    let phi1 = Mlp::new(vec![Dense::glorot(8, 2, Activation::Identity, &mut r)]).unwrap();
    let layers = vec![EdgeConvLayer::new(phi0).unwrap(), EdgeConvLayer::new(phi1).unwrap()];
    let scorers = vec![Mlp::glorot(&[4, 1], &mut r).unwrap(), Mlp::glorot(&[2, 3, 1], &mut r).unwrap()];
    let mut model = GnnModel::new(3, layers, scorers).unwrap();
    randomize_biases(&mut model, &mut r);
    let bag = bag_of(vec![random_graph(&mut r, 8, 3)], false);
    let analytic = model.model_gradients(&bag, 1.0).unwrap().flat();
    let numeric = finite_difference(&model, 1e-5, |m| m.patient_score(&bag).unwrap());
    assert!(max_rel_err(&analytic, &numeric, 1e-6) <= 1e-5);
}

#[test]
fn feature_dim_mismatch_in_bag_rejected() {
    let mut r = rng(22);
    let a = Arc::new(random_graph(&mut r, 4, 3));
    let b = Arc::new(random_graph(&mut r, 4, 2));
    assert!(PatientBag::new("p", vec![a, b], true).is_err());
}
