//! Minibatch training with early stopping on validation macro-F1.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::macro_f1;
use super::optim::{adam_step, AdamState};
use crate::error::{Error, Result};
use crate::model::{argmax, McnnModel, Sample};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping. `None`
    /// disables early stopping.
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
    /// Stop as soon as every head reaches validation macro-F1 of 1.
    #[serde(default = "default_true")]
    pub stop_at_perfect: bool,
}

fn default_batch() -> usize {
    32
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> Option<usize> {
    Some(5)
}
fn default_true() -> bool {
    true
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            batch_size: default_batch(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            stop_at_perfect: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_macro_f1: Option<[f64; 3]>,
    /// Mean of the three heads' validation macro-F1.
    pub val_score: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    Perfect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights the model holds after training.
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// Class probabilities for every sample.
pub fn predict_probs(model: &McnnModel, samples: &[Sample]) -> Result<Vec<[Vec<f64>; 3]>> {
    samples.par_iter().map(|s| model.forward_sample(s)).collect()
}

/// Mean loss and per-head macro-F1 of `model` on `samples`.
pub fn evaluate_samples(model: &McnnModel, samples: &[Sample]) -> Result<(f64, [f64; 3])> {
    let probs = predict_probs(model, samples)?;
    let mut loss = 0.0;
    for (p, s) in probs.iter().zip(samples) {
        for h in 0..3 {
            loss -= p[h][s.labels[h]].max(f64::MIN_POSITIVE).ln();
        }
    }
    let mut f1 = [0.0; 3];
    for h in 0..3 {
        let truth: Vec<usize> = samples.iter().map(|s| s.labels[h]).collect();
        let pred: Vec<usize> = probs.iter().map(|p| argmax(&p[h])).collect();
        f1[h] = macro_f1(&truth, &pred, model.schema.class_counts()[h])?;
    }
    Ok((loss / samples.len() as f64, f1))
}

/// Trains `model` in place with Adam at the configured learning rate.
///
/// Each epoch shuffles the training set from the model seed's stream. With a
/// non-empty `val` set the weights of the best-scoring epoch are restored at
/// the end; ties keep the earlier epoch. `on_epoch` sees every epoch record.
pub fn train(
    model: &mut McnnModel,
    train: &[Sample],
    val: &[Sample],
    settings: &TrainSettings,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<History> {
    if train.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    if settings.batch_size == 0 || settings.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be positive".into()));
    }
    let lr = model.config.learning_rate;
    let mut shuffle = rng::stream(model.config.seed, "train/shuffle");
    let mut state = AdamState::new(model.params.tensors());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=settings.max_epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(settings.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = model.loss_and_grads(&batch)?;
            total += loss * batch.len() as f64;
            adam_step(model.params.tensors_mut(), &grads, &mut state, lr)?;
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Contract(format!("training loss diverged at epoch {epoch}")));
        }
        let mut record = EpochRecord {
            epoch,
            train_loss,
            val_loss: None,
            val_macro_f1: None,
            val_score: None,
        };
        if !val.is_empty() {
            let (vl, f1) = evaluate_samples(model, val)?;
            let score = f1.iter().sum::<f64>() / 3.0;
            record.val_loss = Some(vl);
            record.val_macro_f1 = Some(f1);
            record.val_score = Some(score);
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, epoch, model.params.tensors().to_vec()));
            }
        }
        log::debug!("epoch {epoch}: loss {train_loss:.6}");
        on_epoch(&record);
        let score = record.val_score;
        epochs.push(record);
        if settings.stop_at_perfect && score == Some(1.0) {
            stop = StopReason::Perfect;
            break;
        }
        if let (Some(p), Some((_, best_epoch, _))) = (settings.patience, &best) {
            if epoch - best_epoch >= p {
                stop = StopReason::Patience;
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, e, weights)) => {
            for (t, w) in model.params.tensors_mut().iter_mut().zip(weights) {
                *t = w;
            }
            e
        }
        None => epochs.len(),
    };
    Ok(History {
        epochs,
        best_epoch,
        stop,
    })
}
