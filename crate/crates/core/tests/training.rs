mod common;

use std::sync::Arc;

use common::{finite_difference, max_rel_err, random_graph, rng};
use methylgraph::gnn::{GnnModel, PatientBag};
use methylgraph::nn::Parameters;
use methylgraph::training::{cross_validate, ranking_loss, stratified_kfold, train, TrainConfig};
use methylgraph::Error;
use proptest::prelude::*;
use rand::Rng;

fn brute_loss(scores: &[f64], labels: &[bool], margin: f64) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0;
    for p in 0..scores.len() {
        for q in 0..scores.len() {
            if labels[p] && !labels[q] {
                total += (margin - (scores[p] - scores[q])).max(0.0);
                pairs += 1;
            }
        }
    }
    total / pairs as f64
}

#[test]
fn six_pair_loss_and_gradient() {
    let scores = [0.9, -0.2, 0.4, 0.1, 0.35];
    let labels = [true, true, true, false, false];
    let r = ranking_loss(&scores, &labels, 1.0).unwrap();
    assert_eq!(r.pairs, 6);
    assert!((r.loss - brute_loss(&scores, &labels, 1.0)).abs() < 1e-15);
    let h = 1e-6;
    for k in 0..scores.len() {
        let mut up = scores;
        up[k] += h;
        let mut down = scores;
        down[k] -= h;
        let fd = (brute_loss(&up, &labels, 1.0) - brute_loss(&down, &labels, 1.0)) / (2.0 * h);
        assert!((fd - r.grad[k]).abs() < 1e-8, "score {k}: {fd} vs {}", r.grad[k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn loss_is_shift_invariant(scores in prop::collection::vec(-3.0f64..3.0, 2..16), mask in any::<u16>(), c in -100.0f64..100.0) {
        let labels: Vec<bool> = (0..scores.len()).map(|i| mask >> i & 1 == 1).collect();
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let a = ranking_loss(&scores, &labels, 1.0).unwrap();
        let b = ranking_loss(&shifted, &labels, 1.0).unwrap();
        prop_assert!((a.loss - b.loss).abs() <= 1e-9 * (1.0 + c.abs()));
        prop_assert_eq!(a.pairs, b.pairs);
        prop_assert!(a.loss >= 0.0);
    }
}

#[test]
fn stratification_of_a_large_cohort() {
    let n = 729;
    let ids: Vec<String> = (0..n).map(|i| format!("TCGA-{i:04}")).collect();
    let labels: Vec<bool> = (0..n).map(|i| (i * 37) % 100 < 31).collect();
    let pos = labels.iter().filter(|&&l| l).count();
    let split = stratified_kfold(&ids, &labels, 5, 17).unwrap();
    assert_eq!(split.assignment.len(), n);
    let mut sizes = Vec::new();
    for k in 0..5 {
        let members = split.members(k);
        let fold_pos = members
            .iter()
            .filter(|id| labels[id[5..].parse::<usize>().unwrap()])
            .count();
        let expected = pos as f64 / 5.0;
        assert!((fold_pos as f64 - expected).abs() < 1.0, "fold {k}: {fold_pos} positives, expected ≈{expected}");
        sizes.push(members.len());
    }
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
}

#[test]
fn too_many_folds() {
    let ids: Vec<String> = (0..10).map(|i| i.to_string()).collect();
    let labels: Vec<bool> = (0..10).map(|i| i < 2).collect();
    assert!(matches!(stratified_kfold(&ids, &labels, 3, 0), Err(Error::Stratification(_))));
}

/// Small cohort where positives carry a shifted feature mean.
fn cohort(n: usize, seed: u64) -> Vec<PatientBag> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let label = i % 2 == 0;
            let slides = r.random_range(1..=2);
            let graphs = (0..slides)
                .map(|_| {
                    let nodes = r.random_range(4..=10);
                    let g = random_graph(&mut r, nodes, 4);
                    let shifted: Vec<_> = g
                        .nodes()
                        .iter()
                        .map(|node| {
                            let mut node = node.clone();
                            if label {
                                node.features[0] += 1.0;
                            }
                            node
                        })
                        .collect();
                    Arc::new(methylgraph::spatial::WsiGraph::new(g.slide_id(), shifted, g.edges().to_vec()).unwrap())
                })
                .collect();
            PatientBag::new(format!("pt{i:03}"), graphs, label).unwrap()
        })
        .collect()
}

fn small_config() -> TrainConfig {
    TrainConfig { epochs: 5, batch_size: 4, layers: 2, hidden_dim: 6, lr: 1e-2, seed: 3, folds: 3, ..Default::default() }
}

#[test]
fn batch_loss_gradient_matches_finite_differences() {
    let bags = cohort(6, 1);
    let config = small_config();
    let model = config.init_model(4, 0).unwrap();
    let labels: Vec<bool> = bags.iter().map(|b| b.label).collect();
    let loss_of = |m: &GnnModel| {
        let scores: Vec<f64> = bags.iter().map(|b| m.patient_score(b).unwrap()).collect();
        ranking_loss(&scores, &labels, 1.0).unwrap().loss
    };
    let scores: Vec<f64> = bags.iter().map(|b| model.patient_score(b).unwrap()).collect();
    let rl = ranking_loss(&scores, &labels, 1.0).unwrap();
    let mut analytic = vec![0.0; model.param_count()];
    for (b, g) in bags.iter().zip(&rl.grad) {
        for (a, x) in analytic.iter_mut().zip(model.model_gradients(b, *g).unwrap().flat()) {
            *a += x;
        }
    }
    let numeric = finite_difference(&model, 1e-5, loss_of);
    let err = max_rel_err(&analytic, &numeric, 1e-6);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let bags = cohort(8, 2);
    let config = TrainConfig { lr: 0.0, ..small_config() };
    let model = config.init_model(4, 0).unwrap();
    let (trained, history) = train(model.clone(), &bags, &config, None).unwrap();
    let before: Vec<u64> = model.flat_params().iter().map(|p| p.to_bits()).collect();
    let after: Vec<u64> = trained.flat_params().iter().map(|p| p.to_bits()).collect();
    assert_eq!(before, after);
    assert_eq!(history.epoch_loss.len(), config.epochs);
}

#[test]
fn training_is_deterministic_across_thread_modes() {
    let bags = cohort(10, 4);
    let config = small_config();
    let model = config.init_model(4, 0).unwrap();
    let (a, ha) = train(model.clone(), &bags, &config, None).unwrap();
    let (b, hb) = train(model.clone(), &bags, &config, None).unwrap();
    let strict = TrainConfig { strict_deterministic: true, ..config.clone() };
    let (c, hc) = train(model, &bags, &strict, None).unwrap();
    assert_eq!(a.flat_params(), b.flat_params());
    assert_eq!(a.flat_params(), c.flat_params());
    assert_eq!(ha.epoch_loss, hb.epoch_loss);
    assert_eq!(ha.epoch_loss, hc.epoch_loss);
}

#[test]
fn training_lowers_the_loss() {
    let bags = cohort(16, 5);
    let config = TrainConfig { epochs: 40, ..small_config() };
    let model = config.init_model(4, 0).unwrap();
    let (_, history) = train(model, &bags, &config, None).unwrap();
    let first = history.epoch_loss[0];
    let last = *history.epoch_loss.last().unwrap();
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn single_class_training_set_is_rejected() {
    let bags: Vec<PatientBag> = cohort(6, 6).into_iter().filter(|b| b.label).collect();
    let config = small_config();
    let model = config.init_model(4, 0).unwrap();
    assert!(train(model, &bags, &config, None).is_err());
}

#[test]
fn cross_validation_scores_every_patient_once() {
    let bags = cohort(12, 7);
    let config = small_config();
    let cv = cross_validate(&bags, &config, None).unwrap();
    assert_eq!(cv.folds.len(), 3);
    let pooled = cv.pooled_predictions();
    assert_eq!(pooled.len(), 12);
    for p in &pooled {
        assert_eq!(cv.split.fold_of(&p.patient_id), Some(p.fold));
        let bag = bags.iter().find(|b| b.patient_id == p.patient_id).unwrap();
        assert_eq!(bag.label, p.label);
        let fold = &cv.folds[p.fold];
        assert_eq!(fold.model.patient_score(bag).unwrap(), p.score);
    }
    for f in &cv.folds {
        assert_eq!(f.history.val_auroc.len(), config.epochs);
    }
    // reusing the split gives the same result
    let again = cross_validate(&bags, &config, Some(cv.split.clone())).unwrap();
    assert_eq!(again.pooled_predictions(), pooled);
}
