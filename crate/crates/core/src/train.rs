//! Optimizer, early stopping, Monte-Carlo splits and classification
//! metrics. The epoch loop itself lives in the `robofi` crate, which can
//! fan samples out across threads.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Gradients, ParamStore, Scalar};
use crate::rng::RngState;
use crate::types::{ActivityLabel, NUM_CLASSES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("dataset of {0} samples is too small to split (need at least 10)")]
    TooSmall(usize),
    #[error("predictions ({preds}) and truth ({truth}) differ in length")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 2e-5, batch_size: 16, max_epochs: 150, patience: 15, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(TrainError::InvalidConfig("lr must be positive and weight_decay non-negative"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::InvalidConfig("batch_size, max_epochs and patience must be positive"));
        }
        Ok(())
    }
}

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(store: &ParamStore<F>, lr: f64, weight_decay: f64) -> Self {
        let zeros = |s: &ParamStore<F>| s.ids().map(|id| vec![F::zero(); s.get(id).numel()]).collect();
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(store), v: zeros(store) }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let (one_b1, one_b2) = (F::of(1.0 - self.beta1), F::of(1.0 - self.beta2));
        let step_size = F::of(self.lr / bc1);
        let inv_bc2 = F::of(1.0 / bc2);
        let eps = F::of(self.eps);
        let decay = F::of(1.0 - self.lr * self.weight_decay);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let w = store.get_mut(id).data_mut();
            for i in 0..w.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let update = step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
                w[i] = w[i] * decay - update;
            }
        }
    }
}

/// What [`EarlyStopping::observe`] concluded about an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss; an epoch improves when it beats the
/// best by more than [`EarlyStopping::MIN_DELTA`].
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub const MIN_DELTA: f64 = 1e-6;

    pub fn new(patience: usize) -> Self {
        Self { patience, best_loss: f64::INFINITY, best_epoch: None, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if self.best_epoch.is_none() || val_loss < self.best_loss - Self::MIN_DELTA {
            self.best_loss = val_loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

/// Fractions and fold count of the Monte-Carlo re-splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub folds: usize,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.7, val_frac: 0.1, test_frac: 0.2, folds: 5, stratified: true }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(TrainError::InvalidConfig("split fractions must lie in [0, 1] and sum to 1"));
        }
        if self.folds == 0 {
            return Err(TrainError::InvalidConfig("folds must be positive"));
        }
        Ok(())
    }
}

/// Index sets of one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn round_half_up(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

/// Orders `indices` so every prefix is as class-balanced as possible: each
/// class is shuffled, then classes are visited round-robin in a shuffled
/// order.
fn stratified_order(labels: &[ActivityLabel], rng: &mut RngState) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    for c in by_class.iter_mut() {
        rng.shuffle(c);
    }
    let mut class_order: Vec<usize> = (0..NUM_CLASSES).collect();
    rng.shuffle(&mut class_order);
    let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(labels.len());
    for r in 0..longest {
        for &c in &class_order {
            if let Some(i) = by_class[c].get(r) {
                out.push(*i);
            }
        }
    }
    out
}

/// `spec.folds` independent shuffles, fold `k` seeded with `seed + k`, each
/// cut into disjoint train/val/test index sets covering every sample.
pub fn mc_splits(labels: &[ActivityLabel], spec: &SplitSpec, seed: u64) -> Result<Vec<Split>, TrainError> {
    spec.validate()?;
    let n = labels.len();
    if n < 10 {
        return Err(TrainError::TooSmall(n));
    }
    let n_test = round_half_up(spec.test_frac * n as f64);
    let n_val = round_half_up(spec.val_frac * n as f64).min(n - n_test);
    Ok((0..spec.folds)
        .map(|k| {
            let mut rng = RngState::new(seed.wrapping_add(k as u64));
            let order = if spec.stratified {
                stratified_order(labels, &mut rng)
            } else {
                let mut o: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut o);
                o
            };
            let mut split = Split {
                test: order[..n_test].to_vec(),
                val: order[n_test..n_test + n_val].to_vec(),
                train: order[n_test + n_val..].to_vec(),
            };
            split.train.sort_unstable();
            split.val.sort_unstable();
            split.test.sort_unstable();
            split
        })
        .collect())
}

/// Stratified carve-out of `frac` of `indices` (at least one sample) for
/// validation; returns `(train, val)`.
pub fn carve_validation(
    indices: &[usize],
    labels: &[ActivityLabel],
    frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if indices.len() < 2 {
        return Err(TrainError::EmptySplit("validation"));
    }
    let sub: Vec<ActivityLabel> = indices.iter().map(|i| labels[*i]).collect();
    let mut rng = RngState::new(seed);
    let order = stratified_order(&sub, &mut rng);
    let n_val = round_half_up(frac * indices.len() as f64).clamp(1, indices.len() - 1);
    let mut val: Vec<usize> = order[..n_val].iter().map(|j| indices[*j]).collect();
    let mut train: Vec<usize> = order[n_val..].iter().map(|j| indices[*j]).collect();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Classification quality of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Share of each true class that was predicted correctly; classes absent
    /// from the truth get 0.
    pub fn per_class_accuracy(&self) -> Vec<f64> {
        self.per_class_recall.clone()
    }

    pub fn class_counts(&self) -> Vec<u64> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(preds: &[ActivityLabel], truth: &[ActivityLabel]) -> Result<Metrics, TrainError> {
    if preds.len() != truth.len() {
        return Err(TrainError::LengthMismatch { preds: preds.len(), truth: truth.len() });
    }
    if preds.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let mut confusion = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
    for (p, t) in preds.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    let mut precision = Vec::with_capacity(NUM_CLASSES);
    let mut recall = Vec::with_capacity(NUM_CLASSES);
    let mut f1 = Vec::with_capacity(NUM_CLASSES);
    for c in 0..NUM_CLASSES {
        let tp = confusion[c][c];
        let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let trace: u64 = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    let k = NUM_CLASSES as f64;
    Ok(Metrics {
        accuracy: ratio(trace, preds.len() as u64),
        macro_precision: precision.iter().sum::<f64>() / k,
        macro_recall: recall.iter().sum::<f64>() / k,
        macro_f1: f1.iter().sum::<f64>() / k,
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        confusion,
    })
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
    };
    MeanStd { mean, std }
}

/// Fold-level summary of each headline metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
}

pub fn aggregate(folds: &[Metrics]) -> MetricSummary {
    let pick = |f: fn(&Metrics) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
    MetricSummary {
        accuracy: pick(|m| m.accuracy),
        macro_precision: pick(|m| m.macro_precision),
        macro_recall: pick(|m| m.macro_recall),
        macro_f1: pick(|m| m.macro_f1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn balanced(per_class: usize) -> Vec<ActivityLabel> {
        (0..NUM_CLASSES * per_class).map(|i| ActivityLabel::from_index(i % NUM_CLASSES).unwrap()).collect()
    }

    #[test]
    fn all_class_zero_on_balanced_truth() {
        let truth = balanced(5);
        let preds = vec![ActivityLabel::Arc; truth.len()];
        let m = compute_metrics(&preds, &truth).unwrap();
        assert_eq!(m.accuracy, 0.125);
        assert_eq!(m.macro_recall, 0.125);
        assert_eq!(m.macro_precision, 0.015625);
        assert_eq!(m.total(), 40);
    }

    #[test]
    fn perfect_predictions() {
        let truth = balanced(3);
        let m = compute_metrics(&truth, &truth).unwrap();
        assert_eq!((m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1), (1.0, 1.0, 1.0, 1.0));
        assert!(compute_metrics(&truth[..2], &truth).is_err());
    }

    #[test]
    fn early_stopping_on_rising_loss() {
        let mut es = EarlyStopping::new(15);
        let mut stopped = None;
        for epoch in 1..=150 {
            if es.observe(epoch, epoch as f64) == StopDecision::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(16));
        assert_eq!(es.best_epoch(), Some(1));
    }

    #[test]
    fn tiny_improvements_do_not_count() {
        let mut es = EarlyStopping::new(2);
        assert_eq!(es.observe(1, 1.0), StopDecision::Improved);
        assert_eq!(es.observe(2, 1.0 - 5e-7), StopDecision::Continue);
        assert_eq!(es.observe(3, 0.5), StopDecision::Improved);
    }

    #[test]
    fn splits_of_one_hundred() {
        let labels = balanced(13)[..100].to_vec();
        for stratified in [true, false] {
            let spec = SplitSpec { stratified, ..SplitSpec::default() };
            let folds = mc_splits(&labels, &spec, 9).unwrap();
            assert_eq!(folds.len(), 5);
            for f in &folds {
                assert_eq!((f.train.len(), f.val.len(), f.test.len()), (70, 10, 20));
                let mut all: Vec<usize> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..100).collect::<Vec<_>>());
            }
            assert_eq!(folds, mc_splits(&labels, &spec, 9).unwrap());
        }
        assert_eq!(mc_splits(&labels[..9], &SplitSpec::default(), 0), Err(TrainError::TooSmall(9)));
    }

    #[test]
    fn stratified_splits_are_balanced() {
        let labels = balanced(25);
        for f in mc_splits(&labels, &SplitSpec::default(), 3).unwrap() {
            for part in [&f.train, &f.val, &f.test] {
                let mut counts = [0usize; NUM_CLASSES];
                for i in part.iter() {
                    counts[labels[*i].index()] += 1;
                }
                let expect = part.len() as f64 / NUM_CLASSES as f64;
                for c in counts {
                    assert!((c as f64 - expect).abs() <= 1.0, "{counts:?}");
                }
            }
        }
    }

    #[test]
    fn zero_step_optimizer_is_identity() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("w", Tensor::new(vec![3], vec![0.1, -2.0, 3.5]).unwrap());
        let before = s.clone();
        let mut g = Gradients::empty(1);
        g.set(id, vec![1.0, -1.0, 0.5]);
        let mut opt = AdamW::new(&s, 0.0, 0.0);
        opt.step(&mut s, &g);
        assert_eq!(s, before);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // after one step m_hat = g and v_hat = g^2, so the update is lr * sign(g)
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let mut g = Gradients::empty(1);
        g.set(id, vec![0.3, -4.0]);
        let mut opt = AdamW::new(&s, 0.01, 0.0);
        opt.step(&mut s, &g);
        let w = s.get(id).data();
        assert!((w[0] - 0.99).abs() < 1e-9 && (w[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn aggregate_uses_sample_std() {
        let m = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
    }
}
