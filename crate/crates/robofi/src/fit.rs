//! Epoch loop: shuffled mini-batches, per-sample graphs evaluated in
//! parallel against a shared read-only parameter store, gradients reduced in
//! batch order so results do not depend on the thread count.

use rayon::prelude::*;
use robofi_core::autodiff::{encode_checkpoint, Gradients, Graph, ParamStore};
use robofi_core::models::{predict, Model, ModelError, PreparedSample};
use robofi_core::rng::RngState;
use robofi_core::train::{compute_metrics, AdamW, EarlyStopping, Metrics, StopDecision, TrainConfig, TrainError};
use robofi_core::ActivityLabel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    /// Non-finite training loss; `checkpoint` holds the weights at the time.
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize, checkpoint: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Weights from the epoch with the best validation loss.
    pub params: ParamStore<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Last epoch that ran.
    pub stopped_epoch: usize,
    pub early_stopped: bool,
}

/// Mean loss and predictions over a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub predictions: Vec<ActivityLabel>,
    pub truth: Vec<ActivityLabel>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        let hits = self.predictions.iter().zip(&self.truth).filter(|(p, t)| p == t).count();
        hits as f64 / self.truth.len().max(1) as f64
    }

    pub fn metrics(&self) -> Result<Metrics, TrainError> {
        compute_metrics(&self.predictions, &self.truth)
    }
}

fn label_of(i: usize) -> ActivityLabel {
    ActivityLabel::from_index(i).expect("class index in range")
}

/// Evaluation-mode pass over `data`.
pub fn evaluate(model: &Model, params: &ParamStore<f32>, data: &[PreparedSample<f32>]) -> Result<Evaluation, FitError> {
    if data.is_empty() {
        return Err(TrainError::NoSamples.into());
    }
    let per_sample: Vec<(f64, ActivityLabel)> = data
        .par_iter()
        .map(|s| -> Result<_, ModelError> {
            let mut g = Graph::new();
            let mut rng = RngState::new(0);
            let (logits, loss) = model.loss(&mut g, params, s, &mut rng, false)?;
            Ok((f64::from(g.value(loss)[0]), predict(g.value(logits))?))
        })
        .collect::<Result<_, _>>()?;
    let loss = per_sample.iter().map(|(l, _)| l).sum::<f64>() / data.len() as f64;
    Ok(Evaluation {
        loss,
        predictions: per_sample.into_iter().map(|(_, p)| p).collect(),
        truth: data.iter().map(|s| label_of(s.label)).collect(),
    })
}

/// SHA-256 of the checkpoint encoding, as lowercase hex.
pub fn weight_hash(params: &ParamStore<f32>) -> String {
    Sha256::digest(encode_checkpoint(params)).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn fit(
    model: &Model,
    params: ParamStore<f32>,
    train: &[PreparedSample<f32>],
    val: &[PreparedSample<f32>],
    cfg: &TrainConfig,
) -> Result<FitOutcome, FitError> {
    fit_with_validator(model, params, train, val, cfg, |_, loss| loss)
}

struct SampleStep {
    loss: f64,
    correct: bool,
    grads: Gradients<f32>,
}

/// [`fit`] with a hook that sees each epoch's measured validation loss and
/// returns the value early stopping should use.
pub fn fit_with_validator<V>(
    model: &Model,
    mut params: ParamStore<f32>,
    train: &[PreparedSample<f32>],
    val: &[PreparedSample<f32>],
    cfg: &TrainConfig,
    mut validator: V,
) -> Result<FitOutcome, FitError>
where
    V: FnMut(usize, f64) -> f64,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train").into());
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation").into());
    }
    let mut opt = AdamW::new(&params, cfg.lr, cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut history = Vec::new();
    let mut early_stopped = false;
    let root = RngState::new(cfg.seed);
    let shuffles = root.fork(1);
    let dropout = root.fork(2);

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffles.fork(epoch as u64).shuffle(&mut order);
        let epoch_rng = dropout.fork(epoch as u64);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let steps: Vec<SampleStep> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| -> Result<SampleStep, ModelError> {
                    let mut rng = epoch_rng.fork((b * cfg.batch_size + j) as u64);
                    let mut g = Graph::new();
                    let (logits, loss) = model.loss(&mut g, &params, &train[i], &mut rng, true)?;
                    let loss_value = f64::from(g.value(loss)[0]);
                    let correct = predict(g.value(logits)).map(|p| p.index() == train[i].label).unwrap_or(false);
                    g.backward(loss)?;
                    Ok(SampleStep { loss: loss_value, correct, grads: g.param_gradients(&params) })
                })
                .collect::<Result<_, _>>()?;
            let mut total = Gradients::empty(params.len());
            for s in &steps {
                if !s.loss.is_finite() {
                    return Err(FitError::Diverged { epoch, checkpoint: encode_checkpoint(&params) });
                }
                loss_sum += s.loss;
                hits += usize::from(s.correct);
                total.accumulate(&s.grads);
            }
            total.scale(1.0 / batch.len() as f32);
            opt.step(&mut params, &total);
        }
        let eval = evaluate(model, &params, val)?;
        let val_loss = validator(epoch, eval.loss);
        if !val_loss.is_finite() {
            return Err(FitError::Diverged { epoch, checkpoint: encode_checkpoint(&params) });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_loss,
            val_accuracy: eval.accuracy(),
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                early_stopped = true;
                break;
            }
        }
    }
    let stopped_epoch = history.last().map_or(0, |h| h.epoch);
    Ok(FitOutcome {
        params: best,
        history,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        stopped_epoch,
        early_stopped,
    })
}
