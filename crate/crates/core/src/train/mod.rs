//! Objective, optimizer, epoch loop and checkpoints.

mod checkpoint;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use crate::data::{Record, Vocabs};
use crate::error::{Error, Result};
use crate::eval::{accuracy, auroc, classification_metrics, DEFAULT_THRESHOLD};
use crate::graphbuild::make_batches;
use crate::model::Sdgnn;
use crate::numcore::{Grads, ParamStore, Rng, Tape, Tensor, Var};

/// Floor applied inside every log of the objective.
pub const LOG_FLOOR: f64 = 1e-12;
/// Batch size for inference passes; has no effect on results.
pub const EVAL_BATCH: usize = 256;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Weight on the negative-class term of the loss.
    pub eta: f64,
    /// L2 coefficient on weight matrices.
    pub l2: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.001, batch_size: 512, eta: 1.0, l2: 1e-5, max_epochs: 50, patience: 5, seed: 42 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be positive".into());
        }
        Ok(())
    }
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Mean of `−(y ln ŷ + η (1−y) ln(1−ŷ))` over the batch.
pub fn weighted_bce(probs: &[f64], labels: &[u8], eta: f64) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let y = f64::from(y);
            y * clamped_ln(p) + eta * ((1.0 - y) * clamped_ln(1.0 - p))
        })
        .sum();
    -total / probs.len() as f64
}

/// Unweighted binary cross entropy.
pub fn bce(probs: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let y = f64::from(y);
            y * clamped_ln(p) + (1.0 - y) * clamped_ln(1.0 - p)
        })
        .sum();
    -total / probs.len() as f64
}

/// Tape version of [`weighted_bce`]; `probs` has shape `[B]`.
pub fn weighted_bce_tape(tape: &mut Tape<'_>, probs: Var, labels: &[u8], eta: f64) -> Result<Var> {
    let n = labels.len();
    let pos = Tensor::vector(labels.iter().map(|&y| f64::from(y)).collect());
    let neg = Tensor::vector(labels.iter().map(|&y| eta * (1.0 - f64::from(y))).collect());
    let log_p = tape.log_clamped(probs, LOG_FLOOR);
    let q = tape.affine(probs, -1.0, 1.0);
    let log_q = tape.log_clamped(q, LOG_FLOOR);
    let a = tape.mul_const(log_p, pos)?;
    let b = tape.mul_const(log_q, neg)?;
    let s = tape.add(a, b)?;
    let s = tape.sum(s);
    Ok(tape.affine(s, -1.0 / n as f64, 0.0))
}

/// `λ · Σ‖W‖²` over parameters flagged for decay.
pub fn l2_penalty(store: &ParamStore, lambda: f64) -> f64 {
    let sq: f64 = store.iter().filter(|p| p.decay).map(|p| p.value.data().iter().map(|v| v * v).sum::<f64>()).sum();
    lambda * sq
}

pub fn l2_penalty_tape(tape: &mut Tape<'_>, lambda: f64) -> Result<Option<Var>> {
    let store = tape.store();
    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).decay).collect();
    if lambda == 0.0 || ids.is_empty() {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for id in ids {
        let p = tape.param(id);
        let sq = tape.sum_squares(p);
        total = Some(match total {
            Some(t) => tape.add(t, sq)?,
            None => sq,
        });
    }
    Ok(total.map(|t| tape.affine(t, lambda, 0.0)))
}

/// Adam moments, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState { t: 0, m: zeros(), v: zeros() }
    }
}

/// One bias-corrected Adam update. Refuses to touch any parameter if some
/// gradient is not finite.
pub fn adam_step(store: &mut ParamStore, grads: &Grads, state: &mut AdamState, lr: f64) -> Result<()> {
    for id in store.ids() {
        if let Some(g) = grads.get(id) {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(store.get(id).name.clone()));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        let g = grads.get(id);
        let theta = store.get_mut(id).value.data_mut();
        let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
        for (i, (th, (mi, vi))) in theta.iter_mut().zip(moments).enumerate() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            *th -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Eval-mode probabilities for `records`, in input order.
pub fn predict(net: &Sdgnn, store: &ParamStore, vocabs: &Vocabs, records: &[Record]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(records.len());
    for batch in make_batches(records, vocabs, EVAL_BATCH, None, net.config().max_len)? {
        out.extend(net.forward(store, &batch)?.probs);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
    pub val_f1: f64,
    /// Wall-clock time; the only field that differs between identical runs.
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Mutable state of a run, snapshotted into checkpoints.
struct RunState<'a> {
    net: &'a Sdgnn,
    vocabs: &'a Vocabs,
    config: &'a TrainConfig,
    store: ParamStore,
    adam: AdamState,
    rng: Rng,
}

impl RunState<'_> {
    fn snapshot(&self, epoch: usize, best: Option<f64>) -> Checkpoint {
        Checkpoint {
            model: self.net.config().clone(),
            train: self.config.clone(),
            vocabs: self.vocabs.clone(),
            params: self.store.clone(),
            adam: self.adam.clone(),
            epoch,
            rng: self.rng.state(),
            best_val_auroc: best,
        }
    }

    fn epoch(&mut self, epoch: usize, records: &[Record]) -> Result<f64> {
        train_epoch(self.net, &mut self.store, &mut self.adam, &mut self.rng, self.vocabs, records, self.config, epoch)
    }
}

/// One pass over `records` in a shuffled order drawn from `rng`, with one
/// Adam step per batch. Returns the mean training loss; `epoch` only labels
/// errors. [`train`] is a loop over this plus validation and early stopping.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    net: &Sdgnn,
    store: &mut ParamStore,
    adam: &mut AdamState,
    rng: &mut Rng,
    vocabs: &Vocabs,
    records: &[Record],
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let shuffle = rng.next_u64();
    let batches = make_batches(records, vocabs, config.batch_size, Some(shuffle), net.config().max_len)?;
    let mut loss_sum = 0.0;
    for (b, batch) in batches.iter().enumerate() {
        let (loss, grads) = {
            let mut tape = Tape::new(store);
            let out = net.forward_tape(&mut tape, batch, Some(&mut *rng))?;
            let mut loss = weighted_bce_tape(&mut tape, out.probs, &batch.labels, config.eta)?;
            if let Some(reg) = l2_penalty_tape(&mut tape, config.l2)? {
                loss = tape.add(loss, reg)?;
            }
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            (value, tape.backward(loss)?)
        };
        adam_step(store, &grads, adam, config.lr)?;
        loss_sum += loss * batch.size() as f64;
    }
    Ok(loss_sum / records.len() as f64)
}

/// Validation summary used for model selection.
struct ValScore {
    auroc: f64,
    f1: f64,
    loss: f64,
}

fn validate(net: &Sdgnn, store: &ParamStore, vocabs: &Vocabs, records: &[Record], eta: f64) -> Result<ValScore> {
    let probs = predict(net, store, vocabs, records)?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let report = classification_metrics(&probs, &labels, DEFAULT_THRESHOLD)?;
    Ok(ValScore { auroc: auroc(&probs, &labels)?, f1: report.f1, loss: weighted_bce(&probs, &labels, eta) })
}

/// Trains from the parameters in `store`, keeping the checkpoint with the
/// best validation AUROC (ties broken by lower validation loss). Stops after
/// `patience` epochs without improvement or at `max_epochs`. `on_epoch` sees
/// each log line as it is produced.
pub fn train(
    net: &Sdgnn,
    store: ParamStore,
    vocabs: &Vocabs,
    train_set: &[Record],
    val_set: &[Record],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    // fail before training if validation AUROC is undefined
    let val_labels: Vec<u8> = val_set.iter().map(|r| r.label).collect();
    auroc(&vec![0.0; val_labels.len()], &val_labels)?;

    let mut run = RunState { net, vocabs, config, adam: AdamState::new(&store), store, rng: Rng::new(config.seed) };
    let mut log = Vec::new();
    let mut best: Option<(Checkpoint, f64, f64)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let train_loss = run.epoch(epoch, train_set)?;
        let val = validate(net, &run.store, vocabs, val_set, config.eta)?;
        let entry = EpochLog {
            epoch,
            train_loss,
            val_auroc: val.auroc,
            val_f1: val.f1,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);

        let improved = match &best {
            None => true,
            Some((_, auc, loss)) => val.auroc > *auc || (val.auroc == *auc && val.loss < *loss),
        };
        if improved {
            best = Some((run.snapshot(epoch, Some(val.auroc)), val.auroc, val.loss));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (best, best_auroc, _) = best.expect("at least one epoch ran");
    let last_epoch = log.last().map_or(0, |e| e.epoch);
    Ok(TrainOutcome { best, last: run.snapshot(last_epoch, Some(best_auroc)), log })
}

/// Thresholded accuracy of a model on labelled records.
pub fn evaluate_accuracy(net: &Sdgnn, store: &ParamStore, vocabs: &Vocabs, records: &[Record]) -> Result<f64> {
    let probs = predict(net, store, vocabs, records)?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    Ok(accuracy(&probs, &labels, DEFAULT_THRESHOLD))
}
