//! Evaluation protocols: Monte-Carlo cross-validation, leave-one-velocity-
//! out, the sampling-rate sweep and the sniffer-placement study.
//!
//! Every arm owns its model, normalizer and seeds; arms run in parallel and
//! are collected in a fixed order, so reports are reproducible byte for
//! byte.

use rayon::prelude::*;
use robofi_core::models::{Model, ModelConfig, ModelError, ModelKind};
use robofi_core::preprocess::PreprocessError;
use robofi_core::rng::RngState;
use robofi_core::train::{aggregate, carve_validation, mc_splits, MeanStd, MetricSummary, Metrics, Split, SplitSpec, TrainConfig, TrainError};
use robofi_core::types::SUPPORTED_RATES;
use robofi_core::{ActivityLabel, Location, Sample, Velocity, NUM_CLASSES};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{evaluate, fit, EpochRecord, FitError};
use crate::prepare::Normalizer;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("no samples recorded at velocity {0:?}")]
    MissingVelocity(Velocity),
    #[error("no samples recorded at location {0:?}")]
    MissingLocation(Location),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unsupported sampling rate {0} Hz")]
    UnsupportedRate(u32),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl ProtocolError {
    /// Whether the error reflects bad input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        match self {
            ProtocolError::MissingVelocity(_)
            | ProtocolError::MissingLocation(_)
            | ProtocolError::EmptyDataset
            | ProtocolError::UnsupportedRate(_) => true,
            ProtocolError::Train(e) => !matches!(e, TrainError::DivergedLoss { .. }),
            ProtocolError::Model(ModelError::Config(_)) => true,
            _ => false,
        }
    }
}

/// Everything that determines one training arm besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub model: ModelConfig,
    pub kind: ModelKind,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub rate_hz: u32,
}

impl Experiment {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        if !SUPPORTED_RATES.contains(&self.rate_hz) {
            return Err(ProtocolError::UnsupportedRate(self.rate_hz));
        }
        Ok(())
    }
}

/// Result of one train/validate/test arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub metrics: Metrics,
    pub history: Vec<EpochRecord>,
}

/// Folds plus their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub folds: Vec<FoldReport>,
    pub summary: MetricSummary,
    pub experiment: Experiment,
}

impl ProtocolReport {
    fn new(folds: Vec<FoldReport>, experiment: &Experiment) -> Self {
        let metrics: Vec<Metrics> = folds.iter().map(|f| f.metrics.clone()).collect();
        Self { summary: aggregate(&metrics), folds, experiment: experiment.clone() }
    }
}

/// A trained arm: its report plus what is needed to evaluate it elsewhere.
pub struct TrainedArm {
    pub report: FoldReport,
    pub model: Model,
    pub params: robofi_core::autodiff::ParamStore<f32>,
    pub normalizer: Normalizer,
}

/// Fits on `split.train`, early-stops on `split.val` and scores
/// `split.test`. Model initialization, shuffling and dropout use `seed`.
pub fn run_arm(
    samples: &[Sample],
    split: &Split,
    exp: &Experiment,
    fold: usize,
    seed: u64,
) -> Result<TrainedArm, ProtocolError> {
    let normalizer = Normalizer::fit(samples, &split.train, exp.rate_hz)?;
    let p = exp.model.patch;
    let train = normalizer.prepare(samples, &split.train, p)?;
    let val = normalizer.prepare(samples, &split.val, p)?;
    let test = normalizer.prepare(samples, &split.test, p)?;
    let (model, params) = Model::init::<f32>(exp.model.clone(), exp.kind, seed)?;
    let cfg = TrainConfig { seed, ..exp.train.clone() };
    let outcome = fit(&model, params, &train, &val, &cfg)?;
    let eval = evaluate(&model, &outcome.params, &test)?;
    let report = FoldReport {
        fold,
        seed,
        train_size: train.len(),
        val_size: val.len(),
        test_size: test.len(),
        best_epoch: outcome.best_epoch,
        stopped_epoch: outcome.stopped_epoch,
        metrics: eval.metrics()?,
        history: outcome.history,
    };
    Ok(TrainedArm { report, model, params: outcome.params, normalizer })
}

fn labels(samples: &[Sample], subset: &[usize]) -> Vec<ActivityLabel> {
    subset.iter().map(|i| samples[*i].meta.label).collect()
}

/// Monte-Carlo cross-validation restricted to `subset` (indices into
/// `samples`). Fold `k` uses seed `exp.train.seed + k`.
pub fn run_cv_subset(samples: &[Sample], subset: &[usize], exp: &Experiment) -> Result<ProtocolReport, ProtocolError> {
    exp.validate()?;
    if subset.is_empty() {
        return Err(ProtocolError::EmptyDataset);
    }
    let base = exp.train.seed;
    let splits = mc_splits(&labels(samples, subset), &exp.split, base)?;
    let folds: Vec<FoldReport> = splits
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let map = |v: &[usize]| v.iter().map(|j| subset[*j]).collect::<Vec<_>>();
            let split = Split { train: map(&s.train), val: map(&s.val), test: map(&s.test) };
            run_arm(samples, &split, exp, k, base.wrapping_add(k as u64)).map(|a| a.report)
        })
        .collect::<Result<_, _>>()?;
    Ok(ProtocolReport::new(folds, exp))
}

pub fn run_cv(samples: &[Sample], exp: &Experiment) -> Result<ProtocolReport, ProtocolError> {
    let all: Vec<usize> = (0..samples.len()).collect();
    run_cv_subset(samples, &all, exp)
}

fn indices_where(samples: &[Sample], pred: impl Fn(&Sample) -> bool) -> Vec<usize> {
    (0..samples.len()).filter(|i| pred(&samples[*i])).collect()
}

/// One held-out velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LovoArm {
    pub held_out: Velocity,
    pub fold: FoldReport,
    /// Per-class accuracy on the held-out velocity, class-index order.
    pub per_class_accuracy: Vec<f64>,
    pub class_counts: Vec<u64>,
    pub overall_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LovoReport {
    pub arms: Vec<LovoArm>,
    pub experiment: Experiment,
}

/// Fraction of the training velocities carved out for early stopping.
pub const LOVO_VAL_FRAC: f64 = 0.1;

/// Trains on two velocity tiers and tests on the third, for each tier.
pub fn run_lovo(samples: &[Sample], exp: &Experiment) -> Result<LovoReport, ProtocolError> {
    exp.validate()?;
    for v in Velocity::ALL {
        if !samples.iter().any(|s| s.meta.velocity == v) {
            return Err(ProtocolError::MissingVelocity(v));
        }
    }
    let all_labels: Vec<ActivityLabel> = samples.iter().map(|s| s.meta.label).collect();
    let arms: Vec<LovoArm> = Velocity::ALL
        .par_iter()
        .enumerate()
        .map(|(k, &v)| -> Result<LovoArm, ProtocolError> {
            let seed = exp.train.seed.wrapping_add(k as u64);
            let pool = indices_where(samples, |s| s.meta.velocity != v);
            let (train, val) = carve_validation(&pool, &all_labels, LOVO_VAL_FRAC, seed)?;
            let test = indices_where(samples, |s| s.meta.velocity == v);
            let arm = run_arm(samples, &Split { train, val, test }, exp, k, seed)?;
            let m = &arm.report.metrics;
            Ok(LovoArm {
                held_out: v,
                per_class_accuracy: m.per_class_accuracy(),
                class_counts: m.class_counts(),
                overall_accuracy: m.accuracy,
                fold: arm.report,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(LovoReport { arms, experiment: exp.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rate_hz: u32,
    pub velocity: Velocity,
    pub report: ProtocolReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqSweepReport {
    pub rates: Vec<u32>,
    pub velocities: Vec<Velocity>,
    /// Mean test accuracy, `grid[rate][velocity]`.
    pub grid: Vec<Vec<MeanStd>>,
    pub cells: Vec<SweepCell>,
}

/// Cross-validation within each velocity subset at every rate.
pub fn run_freq_sweep(samples: &[Sample], exp: &Experiment, rates: &[u32]) -> Result<FreqSweepReport, ProtocolError> {
    for r in rates {
        if !SUPPORTED_RATES.contains(r) {
            return Err(ProtocolError::UnsupportedRate(*r));
        }
    }
    for v in Velocity::ALL {
        if !samples.iter().any(|s| s.meta.velocity == v) {
            return Err(ProtocolError::MissingVelocity(v));
        }
    }
    let plan: Vec<(u32, Velocity)> =
        rates.iter().flat_map(|r| Velocity::ALL.iter().map(move |v| (*r, *v))).collect();
    let cells: Vec<SweepCell> = plan
        .par_iter()
        .map(|&(rate_hz, velocity)| -> Result<SweepCell, ProtocolError> {
            let subset = indices_where(samples, |s| s.meta.velocity == velocity);
            let cell_exp = Experiment { rate_hz, ..exp.clone() };
            Ok(SweepCell { rate_hz, velocity, report: run_cv_subset(samples, &subset, &cell_exp)? })
        })
        .collect::<Result<_, _>>()?;
    let grid = rates
        .iter()
        .enumerate()
        .map(|(i, _)| (0..3).map(|j| cells[i * 3 + j].report.summary.accuracy).collect())
        .collect();
    Ok(FreqSweepReport { rates: rates.to_vec(), velocities: Velocity::ALL.to_vec(), grid, cells })
}

/// Per-class train/test counts for the placement study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSpec {
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for LocationSpec {
    fn default() -> Self {
        Self { train_per_class: 18, test_per_class: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationArm {
    /// `L1` .. `L4`, or `Mixed` for the union of all training sets.
    pub train_on: String,
    /// Test accuracy on each location's test set, `L1` .. `L4`.
    pub test_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationReport {
    pub locations: Vec<Location>,
    pub arms: Vec<LocationArm>,
    pub experiment: Experiment,
    pub counts: LocationSpec,
}

/// Splits one location's samples per class: the test share is
/// `test / (train + test)` of each class (at least one sample).
fn location_split(
    samples: &[Sample],
    location: Location,
    spec: &LocationSpec,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let share = spec.test_per_class as f64 / (spec.train_per_class + spec.test_per_class).max(1) as f64;
    for label in ActivityLabel::ALL {
        let mut idx = indices_where(samples, |s| s.meta.location == location && s.meta.label == label);
        if idx.is_empty() {
            continue;
        }
        RngState::new(seed).fork(label.index() as u64).shuffle(&mut idx);
        let k = ((share * idx.len() as f64).round() as usize).clamp(1, idx.len().saturating_sub(1).max(1));
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Same-location and mixed-location training, each arm tested on every
/// location.
pub fn run_location(samples: &[Sample], exp: &Experiment, spec: &LocationSpec) -> Result<LocationReport, ProtocolError> {
    exp.validate()?;
    for l in Location::ALL {
        if !samples.iter().any(|s| s.meta.location == l) {
            return Err(ProtocolError::MissingLocation(l));
        }
    }
    let seed = exp.train.seed;
    let splits: Vec<(Vec<usize>, Vec<usize>)> =
        Location::ALL.iter().map(|l| location_split(samples, *l, spec, seed)).collect();
    let mut plan: Vec<(String, Vec<usize>)> =
        Location::ALL.iter().zip(&splits).map(|(l, (tr, _))| (l.name().to_string(), tr.clone())).collect();
    let mut mixed: Vec<usize> = splits.iter().flat_map(|(tr, _)| tr.iter().copied()).collect();
    mixed.sort_unstable();
    plan.push(("Mixed".to_string(), mixed));
    let all_labels: Vec<ActivityLabel> = samples.iter().map(|s| s.meta.label).collect();

    let arms: Vec<LocationArm> = plan
        .par_iter()
        .enumerate()
        .map(|(k, (name, pool))| -> Result<LocationArm, ProtocolError> {
            let arm_seed = seed.wrapping_add(k as u64);
            let (train, val) = carve_validation(pool, &all_labels, LOVO_VAL_FRAC, arm_seed)?;
            let own_test = splits.get(k).map_or_else(|| splits[0].1.clone(), |s| s.1.clone());
            let arm = run_arm(samples, &Split { train, val, test: own_test }, exp, k, arm_seed)?;
            let mut test_accuracy = Vec::with_capacity(4);
            for (_, test) in &splits {
                let data = arm.normalizer.prepare(samples, test, exp.model.patch)?;
                test_accuracy.push(evaluate(&arm.model, &arm.params, &data)?.accuracy());
            }
            Ok(LocationArm {
                train_on: name.clone(),
                test_accuracy,
                best_epoch: arm.report.best_epoch,
                stopped_epoch: arm.report.stopped_epoch,
                history: arm.report.history,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(LocationReport { locations: Location::ALL.to_vec(), arms, experiment: exp.clone(), counts: spec.clone() })
}

/// Class-count-weighted mean of per-class accuracies.
pub fn weighted_class_mean(per_class: &[f64], counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    per_class.iter().zip(counts).map(|(a, c)| a * *c as f64).sum::<f64>() / total.max(1) as f64
}

/// Class names in table order.
pub fn class_names() -> [&'static str; NUM_CLASSES] {
    ActivityLabel::ALL.map(ActivityLabel::name)
}
