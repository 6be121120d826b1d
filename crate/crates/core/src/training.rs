//! Pairwise ranking-loss training over patient bags.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{BagAggregation, BagTrace, GnnModel, PatientBag, DEFAULT_HIDDEN_DIM, DEFAULT_LAYERS};
use crate::metrics::{auroc, ScoredCohort};
use crate::nn::{AdamState, Gradients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub layers: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub seed: u64,
    pub folds: usize,
    pub strict_deterministic: bool,
    pub aggregation: BagAggregation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 8,
            layers: DEFAULT_LAYERS,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            lr: 1e-3,
            weight_decay: 1e-4,
            margin: 1.0,
            seed: 0,
            folds: 5,
            strict_deterministic: false,
            aggregation: BagAggregation::Sum,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.epochs == 0 || self.batch_size == 0 || self.folds == 0 || self.layers == 0 || self.hidden_dim == 0 {
            return bad("epochs, batch_size, folds, layers and hidden_dim must all be at least 1".into());
        }
        // lr = 0 is accepted as a no-op run
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be finite and non-negative, got {}", self.weight_decay));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        Ok(())
    }

    /// Fresh model for this configuration: Glorot EdgeConv layers drawn from
    /// `(seed, stream)` and zero scorer weights.
    pub fn init_model(&self, input_dim: usize, stream: u64) -> Result<GnnModel> {
        let mut rng = derived_rng(self.seed, stream, 0x11);
        let mut m = GnnModel::glorot(input_dim, &vec![self.hidden_dim; self.layers], &mut rng)?.with_aggregation(self.aggregation);
        // scorers start at zero so every patient begins with score 0
        for scorer in m.scorers_mut() {
            for layer in scorer.layers_mut() {
                layer.weight.data_mut().fill(0.0);
            }
        }
        Ok(m)
    }
}

/// Independent generator per `(seed, stream, purpose)`.
fn derived_rng(seed: u64, stream: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingLoss {
    pub loss: f64,
    /// d loss / d score for every input score.
    pub grad: Vec<f64>,
    /// Number of positive/negative pairs; zero means the loss is defined as 0.
    pub pairs: usize,
}

/// Mean hinge `max(0, margin − (s_p − s_q))` over all (positive p, negative q) pairs.
pub fn ranking_loss(scores: &[f64], labels: &[bool], margin: f64) -> Result<RankingLoss> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let pairs = pos.len() * neg.len();
    let mut grad = vec![0.0; scores.len()];
    if pairs == 0 {
        return Ok(RankingLoss { loss: 0.0, grad, pairs });
    }
    let norm = pairs as f64;
    let mut loss = 0.0;
    for &p in &pos {
        for &q in &neg {
            let slack = margin - (scores[p] - scores[q]);
            if slack > 0.0 {
                loss += slack;
                grad[p] -= 1.0;
                grad[q] += 1.0;
            }
        }
    }
    for g in &mut grad {
        *g /= norm;
    }
    Ok(RankingLoss { loss: loss / norm, grad, pairs })
}

/// Patient-level fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    /// Ids in fold `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, &f)| f == k).map(|(id, _)| id.as_str()).collect()
    }
}

/// Shuffles each class with the seed and deals it round-robin into folds;
/// negatives continue dealing where positives stopped so fold sizes stay balanced.
pub fn stratified_kfold(ids: &[String], labels: &[bool], folds: usize, seed: u64) -> Result<FoldSplit> {
    if ids.len() != labels.len() {
        return Err(Error::Shape(format!("{} ids but {} labels", ids.len(), labels.len())));
    }
    if folds == 0 {
        return Err(Error::Input("folds must be at least 1".into()));
    }
    let mut pos: Vec<&String> = ids.iter().zip(labels).filter(|(_, &l)| l).map(|(i, _)| i).collect();
    let mut neg: Vec<&String> = ids.iter().zip(labels).filter(|(_, &l)| !l).map(|(i, _)| i).collect();
    let minority = pos.len().min(neg.len());
    if folds > minority {
        return Err(Error::Stratification(format!(
            "{folds} folds but only {minority} patients in the minority class"
        )));
    }
    // canonical order first so the split does not depend on input order
    pos.sort();
    neg.sort();
    let mut rng = derived_rng(seed, 0, 0x22);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut assignment = BTreeMap::new();
    for (slot, id) in pos.into_iter().chain(neg).enumerate() {
        if assignment.insert(id.clone(), slot % folds).is_some() {
            return Err(Error::Input(format!("duplicate patient id {id}")));
        }
    }
    Ok(FoldSplit { folds, assignment })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    /// Batches per epoch that had no positive/negative pair.
    pub skipped_batches: Vec<usize>,
    pub val_auroc: Vec<Option<f64>>,
    /// Not serialized to result files.
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

fn check_bags(model: &GnnModel, bags: &[PatientBag]) -> Result<()> {
    if let Some(b) = bags.iter().find(|b| b.feature_dim() != model.input_dim()) {
        return Err(Error::Shape(format!(
            "patient {} has feature dim {}, the model expects {}",
            b.patient_id,
            b.feature_dim(),
            model.input_dim()
        )));
    }
    Ok(())
}

fn map_bags<T: Send>(bags: &[&PatientBag], strict: bool, f: impl Fn(&PatientBag) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if strict {
        bags.iter().map(|b| f(b)).collect()
    } else {
        bags.par_iter().map(|b| f(b)).collect()
    }
}

/// Scores of every bag, in order.
pub fn score_bags(model: &GnnModel, bags: &[PatientBag], strict: bool) -> Result<Vec<f64>> {
    let refs: Vec<&PatientBag> = bags.iter().collect();
    map_bags(&refs, strict, |b| model.patient_score(b))
}

/// Trains `model` in place of a fresh copy and returns it with the loss history.
/// When `validation` is given its AUROC is recorded after every epoch.
pub fn train(model: GnnModel, bags: &[PatientBag], config: &TrainConfig, validation: Option<&[PatientBag]>) -> Result<(GnnModel, TrainHistory)> {
    train_stream(model, bags, config, validation, 0)
}

fn train_stream(
    mut model: GnnModel,
    bags: &[PatientBag],
    config: &TrainConfig,
    validation: Option<&[PatientBag]>,
    stream: u64,
) -> Result<(GnnModel, TrainHistory)> {
    config.validate()?;
    check_bags(&model, bags)?;
    if let Some(v) = validation {
        check_bags(&model, v)?;
    }
    if !bags.iter().any(|b| b.label) || bags.iter().all(|b| b.label) {
        return Err(Error::Input("training needs at least one positive and one negative patient".into()));
    }

    let strict = config.strict_deterministic;
    let mut adam = AdamState::new(&model);
    let mut rng = derived_rng(config.seed, stream, 0x33);
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut skipped = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batches += 1;
            let batch: Vec<&PatientBag> = chunk.iter().map(|&i| &bags[i]).collect();
            let labels: Vec<bool> = batch.iter().map(|b| b.label).collect();
            if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
                skipped += 1;
                continue;
            }
            let traces: Vec<BagTrace> = map_bags(&batch, strict, |bag| model.bag_forward(bag))
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
            let scores: Vec<f64> = traces.iter().map(BagTrace::score).collect();
            let rl = ranking_loss(&scores, &labels, config.margin)?;
            if !rl.loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            loss_sum += rl.loss;

            let jobs: Vec<(usize, &PatientBag)> = batch.iter().enumerate().filter(|(k, _)| rl.grad[*k] != 0.0).map(|(k, b)| (k, *b)).collect();
            let backward = |&(k, bag): &(usize, &PatientBag)| model.bag_backward(bag, &traces[k], rl.grad[k]);
            let parts: Vec<Gradients> = if strict {
                jobs.iter().map(backward).collect::<Result<_>>()
            } else {
                jobs.par_iter().map(backward).collect::<Result<_>>()
            }
            .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
            // index-ordered reduction keeps results independent of thread count
            let mut grads = Gradients::zeros_like(&model);
            for p in &parts {
                grads.add_assign(p)?;
            }
            adam.step(&mut model, &grads, config.lr, config.weight_decay)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        history.epoch_loss.push(loss_sum / batches as f64);
        history.skipped_batches.push(skipped);
        history.val_auroc.push(match validation {
            Some(v) => validation_auroc(&model, v, strict)?,
            None => None,
        });
        history.epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok((model, history))
}

fn validation_auroc(model: &GnnModel, bags: &[PatientBag], strict: bool) -> Result<Option<f64>> {
    let scores = score_bags(model, bags, strict)?;
    let cohort = ScoredCohort::new(
        bags.iter().map(|b| b.patient_id.clone()).collect(),
        scores,
        bags.iter().map(|b| b.label).collect(),
    )?;
    match auroc(&cohort) {
        Ok(v) => Ok(Some(v)),
        Err(Error::MetricUndefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub patient_id: String,
    pub fold: usize,
    pub label: bool,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub model: GnnModel,
    pub history: TrainHistory,
    /// Held-out predictions in ascending patient-id order.
    pub predictions: Vec<Prediction>,
}

impl FoldResult {
    pub fn auroc(&self) -> Result<f64> {
        auroc(&cohort_of(&self.predictions)?)
    }
}

pub fn cohort_of(predictions: &[Prediction]) -> Result<ScoredCohort> {
    ScoredCohort::new(
        predictions.iter().map(|p| p.patient_id.clone()).collect(),
        predictions.iter().map(|p| p.score).collect(),
        predictions.iter().map(|p| p.label).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub split: FoldSplit,
    pub folds: Vec<FoldResult>,
}

impl CrossValidation {
    /// Held-out predictions of every fold, sorted by patient id.
    pub fn pooled_predictions(&self) -> Vec<Prediction> {
        let mut all: Vec<Prediction> = self.folds.iter().flat_map(|f| f.predictions.iter().cloned()).collect();
        all.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        all
    }
}

/// Trains one model per fold on the remaining folds and scores the held-out patients.
/// A previously saved `split` is reused when given, otherwise one is drawn from the seed.
pub fn cross_validate(bags: &[PatientBag], config: &TrainConfig, split: Option<FoldSplit>) -> Result<CrossValidation> {
    config.validate()?;
    let Some(first) = bags.first() else {
        return Err(Error::Size("no patients to cross-validate".into()));
    };
    let input_dim = first.feature_dim();
    let ids: Vec<String> = bags.iter().map(|b| b.patient_id.clone()).collect();
    let labels: Vec<bool> = bags.iter().map(|b| b.label).collect();
    let split = match split {
        Some(s) => {
            if s.assignment.len() != bags.len() || ids.iter().any(|id| s.fold_of(id).is_none()) {
                return Err(Error::Input("fold assignment does not cover exactly this cohort".into()));
            }
            s
        }
        None => stratified_kfold(&ids, &labels, config.folds, config.seed)?,
    };

    let mut folds = Vec::with_capacity(split.folds);
    for k in 0..split.folds {
        let (held, rest): (Vec<&PatientBag>, Vec<&PatientBag>) = bags.iter().partition(|b| split.fold_of(&b.patient_id) == Some(k));
        let held: Vec<PatientBag> = held.into_iter().cloned().collect();
        let rest: Vec<PatientBag> = rest.into_iter().cloned().collect();
        let model = config.init_model(input_dim, k as u64)?;
        let (model, history) = train_stream(model, &rest, config, Some(&held), k as u64)?;
        let scores = score_bags(&model, &held, config.strict_deterministic)?;
        let mut predictions: Vec<Prediction> = held
            .iter()
            .zip(scores)
            .map(|(b, score)| Prediction {
                patient_id: b.patient_id.clone(),
                fold: k,
                label: b.label,
                score,
            })
            .collect();
        predictions.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        folds.push(FoldResult { fold: k, model, history, predictions });
    }
    Ok(CrossValidation { split, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn satisfied_margin_is_zero() {
        let r = ranking_loss(&[2.0, 0.5], &[true, false], 1.0).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn tied_scores_cost_the_margin() {
        let r = ranking_loss(&[0.0, 0.0], &[true, false], 1.0).unwrap();
        assert_eq!(r.loss, 1.0);
        assert_eq!(r.grad, vec![-1.0, 1.0]);
    }

    #[test]
    fn single_class_batch_has_no_pairs() {
        let r = ranking_loss(&[0.3, -2.0], &[true, true], 1.0).unwrap();
        assert_eq!((r.loss, r.pairs), (0.0, 0));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(ranking_loss(&[0.0], &[true, false], 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn exact_divisibility_gives_one_of_each() {
        let labels: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let split = stratified_kfold(&ids(10), &labels, 5, 3).unwrap();
        for k in 0..5 {
            let members = split.members(k);
            assert_eq!(members.len(), 2);
            let pos = members.iter().filter(|id| labels[id[1..].parse::<usize>().unwrap()]).count();
            assert_eq!(pos, 1);
        }
    }

    #[test]
    fn split_depends_on_seed_only() {
        let labels: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let a = stratified_kfold(&ids(30), &labels, 5, 1).unwrap();
        assert_eq!(a, stratified_kfold(&ids(30), &labels, 5, 1).unwrap());
        let b = stratified_kfold(&ids(30), &labels, 5, 2).unwrap();
        assert_ne!(a, b);
        let count = |s: &FoldSplit, k| s.members(k).iter().filter(|id| labels[id[1..].parse::<usize>().unwrap()]).count();
        for k in 0..5 {
            assert_eq!(count(&a, k), count(&b, k));
            assert_eq!(a.members(k).len(), b.members(k).len());
        }
        // input order does not matter
        let mut rev_ids = ids(30);
        rev_ids.reverse();
        let rev_labels: Vec<bool> = labels.iter().rev().copied().collect();
        assert_eq!(a, stratified_kfold(&rev_ids, &rev_labels, 5, 1).unwrap());
    }

    #[test]
    fn too_few_minority_patients() {
        let labels = vec![true, true, false, false, false, false];
        assert!(matches!(stratified_kfold(&ids(6), &labels, 3, 0), Err(Error::Stratification(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { margin: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
    }
}
