//! Ranking metrics and paired bootstrap comparison of two scorers.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores and binary labels for a set of patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCohort {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredCohort {
    pub fn new(ids: Vec<String>, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if ids.len() != scores.len() || ids.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} scores, {} labels",
                ids.len(),
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Input("scores contain NaN".into()));
        }
        Ok(Self { ids, scores, labels })
    }

    /// Cohort with generated ids `0..n`, zero-padded so lexicographic order matches index order.
    pub fn from_scores(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        let width = scores.len().to_string().len();
        let ids = (0..scores.len()).map(|i| format!("{i:0width$}")).collect();
        Self::new(ids, scores, labels)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l).count();
        (pos, self.labels.len() - pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auroc,
    Ap,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auroc" => Ok(Metric::Auroc),
            "ap" => Ok(Metric::Ap),
            other => Err(Error::Input(format!("unknown metric {other:?} (auroc or ap)"))),
        }
    }
}

impl Metric {
    pub fn compute(self, cohort: &ScoredCohort) -> Result<f64> {
        match self {
            Metric::Auroc => auroc(cohort),
            Metric::Ap => average_precision(cohort),
        }
    }
}

/// Area under the ROC curve: the fraction of positive/negative pairs ranked
/// correctly, ties counting one half.
pub fn auroc(cohort: &ScoredCohort) -> Result<f64> {
    let (pos, neg) = cohort.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined(format!(
            "AUROC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    order.sort_by(|&a, &b| cohort.scores[a].total_cmp(&cohort.scores[b]));

    // walk ascending score in tie blocks, counting negatives strictly below
    let mut concordant2: u128 = 0; // twice the (concordant + ½·tied) count
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p_blk, mut n_blk) = (0u128, 0u128);
        while j < order.len() && cohort.scores[order[j]] == cohort.scores[order[i]] {
            if cohort.labels[order[j]] {
                p_blk += 1;
            } else {
                n_blk += 1;
            }
            j += 1;
        }
        concordant2 += 2 * p_blk * neg_below + p_blk * n_blk;
        neg_below += n_blk;
        i = j;
    }
    Ok(concordant2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Mean precision at the rank of each positive, ranking by descending score
/// with ties ordered by ascending patient id.
pub fn average_precision(cohort: &ScoredCohort) -> Result<f64> {
    let (pos, _) = cohort.class_counts();
    if pos == 0 {
        return Err(Error::MetricUndefined("AP needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    order.sort_by(|&a, &b| {
        cohort.scores[b]
            .total_cmp(&cohort.scores[a])
            .then_with(|| cohort.ids[a].cmp(&cohort.ids[b]))
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if cohort.labels[idx] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub metric: Metric,
    pub n_runs: usize,
    pub seed: u64,
    pub values_a: Vec<f64>,
    pub values_b: Vec<f64>,
    /// Single-class resamples that were redrawn, summed over runs.
    pub redraws: usize,
    pub p_value: f64,
}

impl BootstrapReport {
    pub fn median_a(&self) -> f64 {
        median(&self.values_a)
    }

    pub fn median_b(&self) -> f64 {
        median(&self.values_b)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

const MAX_REDRAWS: usize = 100;

/// Generator for bootstrap run `run`; depends only on `(seed, run)`.
fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

/// Paired bootstrap of `metric` for two scorings of the same patients.
///
/// Every run resamples patients with replacement and evaluates both methods
/// on the same resample. The p-value is the two-sided sign test on the
/// per-run differences, `2·min(P(d ≤ 0), P(d ≥ 0))`, clamped to `[2/n_runs, 1]`.
pub fn bootstrap_compare(a: &ScoredCohort, b: &ScoredCohort, metric: Metric, n_runs: usize, seed: u64) -> Result<BootstrapReport> {
    if n_runs == 0 {
        return Err(Error::Input("bootstrap needs at least one run".into()));
    }
    let b = align(a, b)?;
    let n = a.len();
    let runs: Vec<(f64, f64, usize)> = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = run_rng(seed, run);
            for attempt in 0..=MAX_REDRAWS {
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let ra = subset(a, &idx);
                let rb = subset(&b, &idx);
                match (metric.compute(&ra), metric.compute(&rb)) {
                    (Ok(x), Ok(y)) => return Ok((x, y, attempt)),
                    (Err(Error::MetricUndefined(_)), _) | (_, Err(Error::MetricUndefined(_))) => continue,
                    (Err(e), _) | (_, Err(e)) => return Err(e),
                }
            }
            Err(Error::MetricUndefined(format!(
                "bootstrap run {run}: {MAX_REDRAWS} consecutive resamples lacked a class"
            )))
        })
        .collect::<Result<_>>()?;

    let values_a: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let values_b: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let redraws = runs.iter().map(|r| r.2).sum();
    let le = runs.iter().filter(|r| r.0 - r.1 <= 0.0).count() as f64 / n_runs as f64;
    let ge = runs.iter().filter(|r| r.0 - r.1 >= 0.0).count() as f64 / n_runs as f64;
    let p_value = (2.0 * le.min(ge)).clamp((2.0 / n_runs as f64).min(1.0), 1.0);
    Ok(BootstrapReport {
        metric,
        n_runs,
        seed,
        values_a,
        values_b,
        redraws,
        p_value,
    })
}

/// `b` reordered to `a`'s patient order; ids and labels must agree.
fn align(a: &ScoredCohort, b: &ScoredCohort) -> Result<ScoredCohort> {
    if a.len() != b.len() {
        return Err(Error::Pairing(format!("{} vs {} patients", a.len(), b.len())));
    }
    let pos: HashMap<&str, usize> = b.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    if pos.len() != b.len() {
        return Err(Error::Pairing("duplicate patient ids".into()));
    }
    let mut out = ScoredCohort {
        ids: Vec::with_capacity(a.len()),
        scores: Vec::with_capacity(a.len()),
        labels: Vec::with_capacity(a.len()),
    };
    for (i, id) in a.ids.iter().enumerate() {
        let &j = pos
            .get(id.as_str())
            .ok_or_else(|| Error::Pairing(format!("patient {id} missing from the second cohort")))?;
        if b.labels[j] != a.labels[i] {
            return Err(Error::Pairing(format!("patient {id} has different labels")));
        }
        out.ids.push(id.clone());
        out.scores.push(b.scores[j]);
        out.labels.push(b.labels[j]);
    }
    Ok(out)
}

fn subset(c: &ScoredCohort, idx: &[usize]) -> ScoredCohort {
    ScoredCohort {
        ids: idx.iter().map(|&i| c.ids[i].clone()).collect(),
        scores: idx.iter().map(|&i| c.scores[i]).collect(),
        labels: idx.iter().map(|&i| c.labels[i]).collect(),
    }
}
