use methylgraph::metrics::{auroc, average_precision, bootstrap_compare, Metric, ScoredCohort};
use methylgraph::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn auroc_oracle(c: &ScoredCohort) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in 0..c.len() {
        for j in 0..c.len() {
            if c.labels[i] && !c.labels[j] {
                pairs += 1.0;
                if c.scores[i] > c.scores[j] {
                    num += 1.0;
                } else if c.scores[i] == c.scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// Precision at each positive's position, ranking by descending score then ascending id.
fn ap_oracle(c: &ScoredCohort) -> f64 {
    let ahead = |j: usize, i: usize| c.scores[j] > c.scores[i] || (c.scores[j] == c.scores[i] && c.ids[j] <= c.ids[i]);
    let mut sum = 0.0;
    let mut pos = 0.0;
    for i in 0..c.len() {
        if !c.labels[i] {
            continue;
        }
        pos += 1.0;
        let at_or_above: Vec<usize> = (0..c.len()).filter(|&j| ahead(j, i)).collect();
        let hits = at_or_above.iter().filter(|&&j| c.labels[j]).count();
        sum += hits as f64 / at_or_above.len() as f64;
    }
    sum / pos
}

fn random_cohort(rng: &mut ChaCha8Rng) -> ScoredCohort {
    let n = rng.random_range(2..=200);
    let coarse = rng.random_bool(0.5);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n)
        .map(|_| if coarse { rng.random_range(0..6) as f64 } else { rng.random_range(-3.0..3.0) })
        .collect();
    ScoredCohort::from_scores(scores, labels).unwrap()
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 0..500 {
        let c = random_cohort(&mut rng);
        assert!((auroc(&c).unwrap() - auroc_oracle(&c)).abs() <= 1e-12, "cohort {k}");
        assert!((average_precision(&c).unwrap() - ap_oracle(&c)).abs() <= 1e-12, "cohort {k}");
    }
}

#[test]
fn all_tied_scores_give_one_half() {
    for n in [2, 3, 10, 101] {
        let labels = (0..n).map(|i| i % 2 == 0).collect();
        let c = ScoredCohort::from_scores(vec![0.25; n], labels).unwrap();
        assert_eq!(auroc(&c).unwrap(), 0.5);
    }
}

#[test]
fn single_class_is_undefined() {
    let c = ScoredCohort::from_scores(vec![0.1, 0.2], vec![true, true]).unwrap();
    assert!(matches!(auroc(&c), Err(Error::MetricUndefined(_))));
    let c = ScoredCohort::from_scores(vec![0.1, 0.2], vec![false, false]).unwrap();
    assert!(matches!(average_precision(&c), Err(Error::MetricUndefined(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn monotone_transform_keeps_auroc(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_cohort(&mut rng);
        // integer scores keep x³ + 2x exact
        let ints: Vec<f64> = c.scores.iter().map(|s| (s * 10.0).round()).collect();
        let a = ScoredCohort::new(c.ids.clone(), ints.clone(), c.labels.clone()).unwrap();
        let b = ScoredCohort::new(c.ids.clone(), ints.iter().map(|x| x * x * x + 2.0 * x).collect(), c.labels.clone()).unwrap();
        prop_assert_eq!(auroc(&a).unwrap(), auroc(&b).unwrap());
        prop_assert_eq!(average_precision(&a).unwrap(), average_precision(&b).unwrap());
    }

    #[test]
    fn negated_scores_complement(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_cohort(&mut rng);
        let neg = ScoredCohort::new(c.ids.clone(), c.scores.iter().map(|s| -s).collect(), c.labels.clone()).unwrap();
        prop_assert!((auroc(&c).unwrap() + auroc(&neg).unwrap() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn bootstrap_self_comparison_is_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = random_cohort(&mut rng);
    let r = bootstrap_compare(&c, &c, Metric::Auroc, 200, 9).unwrap();
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn bootstrap_detects_planted_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 200;
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let good: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l)) * 1.5 + rng.random_range(-1.0..1.0)).collect();
    let weak: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l)) * 0.2 + rng.random_range(-1.0..1.0)).collect();
    let a = ScoredCohort::from_scores(good, labels.clone()).unwrap();
    let b = ScoredCohort::from_scores(weak, labels).unwrap();
    assert!(auroc(&a).unwrap() - auroc(&b).unwrap() >= 0.2);
    let r = bootstrap_compare(&a, &b, Metric::Auroc, 1000, 1).unwrap();
    assert!(r.p_value < 0.01, "p = {}", r.p_value);
    assert_eq!(r.values_a.len(), 1000);
}

#[test]
fn bootstrap_is_reproducible_and_order_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = random_cohort(&mut rng);
    let mut b = a.clone();
    for s in &mut b.scores {
        *s += rng.random_range(-0.5..0.5);
    }
    let r1 = bootstrap_compare(&a, &b, Metric::Ap, 300, 4).unwrap();
    let r2 = bootstrap_compare(&a, &b, Metric::Ap, 300, 4).unwrap();
    assert_eq!(r1, r2);
    let mut rev = b.clone();
    rev.ids.reverse();
    rev.scores.reverse();
    rev.labels.reverse();
    assert_eq!(bootstrap_compare(&a, &rev, Metric::Ap, 300, 4).unwrap(), r1);
}

#[test]
fn bootstrap_rejects_mismatched_cohorts() {
    let a = ScoredCohort::from_scores(vec![0.1, 0.2, 0.3], vec![true, false, true]).unwrap();
    let b = ScoredCohort::from_scores(vec![0.1, 0.2, 0.3], vec![true, true, true]).unwrap();
    assert!(matches!(bootstrap_compare(&a, &b, Metric::Auroc, 10, 0), Err(Error::Pairing(_))));
}
