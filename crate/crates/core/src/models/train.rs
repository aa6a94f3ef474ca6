//! Mini-batch Adam training loop shared by all three models.
//!
//! Each mini-batch is cut into fixed-size gradient chunks that are
//! evaluated independently (in parallel with the `parallel` feature) and
//! summed in chunk order, so the trajectory depends only on the seed and
//! the configuration, never on the thread count.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Trainable;
use crate::nn::{Adam, AdamConfig, Grads, RngState, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Stop after this many epochs without a `min_delta` improvement.
    pub patience: usize,
    pub min_delta: f64,
    /// Stop once the epoch loss falls to this value (0 disables).
    pub target_loss: f64,
    /// Samples per independently evaluated gradient chunk.
    pub grad_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch: 8,
            lr: 1e-3,
            patience: 20,
            min_delta: 1e-4,
            target_loss: 0.0,
            grad_chunk: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 || self.batch == 0 || self.grad_chunk == 0 {
            return Err("epochs, batch and grad_chunk must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("learning rate {} must be positive", self.lr));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    Plateau,
    TargetLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    pub stop: StopReason,
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("empty training set")]
    Empty,
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite { what: &'static str, epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
}

/// Loss and gradients for one mini-batch, evaluated chunk-wise.
pub fn batch_gradients<M: Trainable>(model: &M, batch: &[&M::Example], chunk: usize, rng: Option<&RngState>) -> (f64, Grads) {
    let n = batch.len() as f64;
    let chunks: Vec<&[&M::Example]> = batch.chunks(chunk).collect();
    let parts = crate::par::map_indexed(chunks.len(), |c| {
        let part = chunks[c];
        let mut tape = Tape::new(model.params());
        let mut chunk_rng = rng.map(|r| r.derive(&[c as u64]));
        let loss = model.batch_loss(&mut tape, part, chunk_rng.as_mut());
        let scaled = tape.affine(loss, part.len() as f64 / n, 0.0);
        (tape.scalar(scaled), tape.backward(scaled))
    });
    let mut total = 0.0;
    let mut grads = Grads::default();
    for (loss, g) in parts {
        total += loss;
        grads.merge(g);
    }
    (total, grads)
}

/// Trains `model` in place. Deterministic given `seed` and `config`.
pub fn train<M: Trainable>(model: &mut M, data: &[M::Example], config: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    config.validate().map_err(TrainError::Config)?;
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    let root = RngState::new(seed);
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, model.params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut root.derive(&[0, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(config.batch).enumerate() {
            let batch: Vec<&M::Example> = idx.iter().map(|&i| &data[i]).collect();
            let dropout_rng = root.derive(&[1, epoch as u64, b as u64]);
            let (loss, grads) = batch_gradients(&*model, &batch, config.grad_chunk, Some(&dropout_rng));
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { what: "loss", epoch, batch: b });
            }
            if !grads.all_finite() {
                return Err(TrainError::NonFinite { what: "gradient", epoch, batch: b });
            }
            adam.step(model.params_mut(), &grads);
            epoch_loss += loss * batch.len() as f64;
        }
        let epoch_loss = epoch_loss / data.len() as f64;
        losses.push(epoch_loss);
        log::debug!("{} epoch {epoch}: loss {epoch_loss:.6}", model.kind());
        if epoch_loss <= config.target_loss {
            return Ok(TrainOutcome { losses, stop: StopReason::TargetLoss });
        }
        if epoch_loss < best - config.min_delta {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                return Ok(TrainOutcome { losses, stop: StopReason::Plateau });
            }
        }
    }
    Ok(TrainOutcome { losses, stop: StopReason::MaxEpochs })
}
