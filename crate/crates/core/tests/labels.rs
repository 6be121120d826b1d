use methylgraph::labels::{
    em_from, fit_gmm, gmm_binarize, group_mean_dm, hier_cluster, make_labels, DmMatrix, Dendrogram, GeneGrouping,
    GmmOptions,
};
use methylgraph::nn::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

/// Two planted gene blocks of 20 genes: block A is hypo-methylated in
/// A-positive patients, block B hyper-methylated in B-positive patients.
fn planted(seed: u64, patients: usize) -> (DmMatrix, Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let a: Vec<u8> = (0..patients).map(|i| u8::from(i % 2 == 0)).collect();
    let b: Vec<u8> = (0..patients).map(|i| u8::from(i % 3 == 0)).collect();
    let mut data = Vec::new();
    for p in 0..patients {
        for g in 0..40 {
            let base = if g < 20 { if a[p] == 1 { -0.2 } else { -0.6 } } else if b[p] == 1 { 0.6 } else { 0.2 };
            data.push(base + noise.sample(&mut rng));
        }
    }
    let dm = DmMatrix::new(names("p", patients), names("g", 40), Matrix::from_vec(patients, 40, data).unwrap()).unwrap();
    (dm, a, b)
}

#[test]
fn planted_blocks_are_recovered() {
    for seed in 0..5 {
        let (dm, a, b) = planted(seed, 60);
        let (labels, grouping) = make_labels(&dm, 2).unwrap();
        let expect: Vec<usize> = (0..40).map(|g| usize::from(g >= 20)).collect();
        assert_eq!(grouping.assignment, expect, "seed {seed}");
        assert_eq!(labels.column(0), a, "seed {seed}");
        assert_eq!(labels.column(1), b, "seed {seed}");
    }
}

#[test]
fn gene_column_order_does_not_change_grouping() {
    let (dm, _, _) = planted(7, 40);
    let base = hier_cluster(&dm, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut perm: Vec<usize> = (0..40).collect();
    for i in (1..40).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let genes: Vec<String> = perm.iter().map(|&g| dm.genes()[g].clone()).collect();
    let mut data = Vec::new();
    for p in 0..dm.patients().len() {
        data.extend(perm.iter().map(|&g| dm.values().get(p, g)));
    }
    let shuffled = DmMatrix::new(dm.patients().to_vec(), genes, Matrix::from_vec(40, 40, data).unwrap()).unwrap();
    let other = hier_cluster(&shuffled, 3).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(other.assignment[new], base.assignment[old]);
    }
}

#[test]
fn patient_order_does_not_change_labels() {
    let (dm, _, _) = planted(3, 48);
    let (base, _) = make_labels(&dm, 2).unwrap();
    let order: Vec<usize> = (0..48).rev().collect();
    let (other, _) = make_labels(&dm.reorder_patients(&order).unwrap(), 2).unwrap();
    for (new, &old) in order.iter().enumerate() {
        assert_eq!(other.patients[new], base.patients[old]);
        assert_eq!(other.binary[new], base.binary[old]);
    }
}

#[test]
fn group_means_match_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (rows, cols, k) = (10, 8, 3);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dm = DmMatrix::new(names("p", rows), names("g", cols), Matrix::from_vec(rows, cols, data.clone()).unwrap()).unwrap();
    let assignment = vec![0, 1, 2, 0, 1, 2, 2, 0];
    let grouping = GeneGrouping { k, assignment: assignment.clone(), dendrogram: Dendrogram { leaves: cols, merges: vec![] } };
    let means = group_mean_dm(&dm, &grouping).unwrap();
    for p in 0..rows {
        for g in 0..k {
            let members: Vec<usize> = (0..cols).filter(|&c| assignment[c] == g).collect();
            let mut s = 0.0;
            for &c in &members {
                s += data[p * cols + c];
            }
            let expect = s / members.len() as f64;
            assert!((means.get(p, g) - expect).abs() <= 1e-15, "({p}, {g})");
        }
    }
}

fn planted_mixture(seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = Normal::new(-0.3, 0.1).unwrap();
    let hi = Normal::new(0.4, 0.1).unwrap();
    let truth: Vec<u8> = (0..500).map(|i| u8::from(i % 2 == 1)).collect();
    let values = truth.iter().map(|&t| if t == 1 { hi.sample(&mut rng) } else { lo.sample(&mut rng) }).collect();
    (values, truth)
}

#[test]
fn gmm_recovers_planted_mixture() {
    for seed in 0..10 {
        let (values, truth) = planted_mixture(seed);
        let (labels, gmm) = gmm_binarize(&values).unwrap();
        assert!((gmm.means[0] + 0.3).abs() <= 0.05, "seed {seed}: {:?}", gmm.means);
        assert!((gmm.means[1] - 0.4).abs() <= 0.05, "seed {seed}: {:?}", gmm.means);
        let correct = labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
        assert!(correct as f64 / 500.0 >= 0.98, "seed {seed}: accuracy {}", correct as f64 / 500.0);
    }
}

#[test]
fn em_log_likelihood_is_monotone() {
    let (values, _) = planted_mixture(1);
    let opts = GmmOptions::default();
    for init in [[-0.5, 0.5], [0.0, 0.1], [-0.31, -0.29], [0.3, 0.6]] {
        let run = em_from(&values, init, &opts);
        for w in run.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{init:?}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn fitted_log_likelihood_matches_recomputation() {
    let (values, _) = planted_mixture(4);
    let gmm = fit_gmm(&values, &GmmOptions::default()).unwrap();
    assert!((gmm.log_likelihood - gmm.log_likelihood_of(&values)).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn binarization_is_shift_invariant(seed in 0u64..1000, shift in -3.0f64..3.0) {
        let (values, _) = planted_mixture(seed);
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let (a, _) = gmm_binarize(&values).unwrap();
        let (b, _) = gmm_binarize(&shifted).unwrap();
        let differ = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        // points sitting on the decision boundary may flip under rounding
        prop_assert!(differ <= 1, "{differ} labels changed");
    }
}
