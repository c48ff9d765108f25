//! Mini-batch training with Adam and validation-based early stopping.

mod adam;
mod checkpoint;
mod loss;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CheckpointTarget, ManifestEntry, META_FILE,
    VOCAB_FILE, WEIGHTS_FILE,
};
pub use loss::{binary_loss, cross_entropy_loss, mean_binary_loss, mean_cross_entropy};

use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::metrics::{summarize_multiclass, summarize_multilabel, EvalSummary, LogBase, RankedPrediction};
use crate::model::{Classifier, Mode};
use crate::tensor::{Graph, Real};
use crate::text::{epoch_batches, Instance, Label, Task};

pub const DEFAULT_GRU_CLIP: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub log_base: LogBase,
}

impl TrainConfig {
    /// Defaults for a model: clipping on only for the GRU encoder.
    pub fn for_encoder(encoder: EncoderKind, lr: f64, batch_size: usize) -> Self {
        Self {
            optimizer: AdamConfig::with_lr(lr),
            batch_size,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            grad_clip: (encoder == EncoderKind::Gru).then_some(DEFAULT_GRU_CLIP),
            log_base: LogBase::E,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.optimizer.lr)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_metric: f64,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `accuracy` or `f1`.
    pub metric: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_metric: f64,
    pub best_checkpoint: Option<String>,
    pub stop_reason: StopReason,
}

impl TrainReport {
    /// First epoch whose validation metric is strictly above `threshold`.
    pub fn first_epoch_above(&self, threshold: f64) -> Option<usize> {
        self.epochs
            .iter()
            .find(|e| e.validation_metric > threshold)
            .map(|e| e.epoch)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<S: Real>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Accuracy for multi-class models; precision, recall@5 and F1 for
/// multi-label ones.
pub fn evaluate<S: Real>(model: &Classifier<S>, instances: &[Instance], log_base: LogBase) -> Result<EvalSummary> {
    match model.config().task {
        Task::Multiclass => {
            let mut preds = Vec::with_capacity(instances.len());
            let mut truths = Vec::with_capacity(instances.len());
            for inst in instances {
                let Label::Class(c) = inst.label else {
                    return Err(Error::Contract(
                        "multilabel instance given to a multiclass model".into(),
                    ));
                };
                preds.push(argmax(&model.predict(&inst.ids)?));
                truths.push(c);
            }
            summarize_multiclass(&preds, &truths)
        }
        Task::Multilabel => {
            let mut ranked = Vec::with_capacity(instances.len());
            for inst in instances {
                let Label::Set(ref truth) = inst.label else {
                    return Err(Error::Contract(
                        "multiclass instance given to a multilabel model".into(),
                    ));
                };
                let probs: Vec<f64> = model.predict(&inst.ids)?.iter().map(|p| p.to_f64_lossy()).collect();
                ranked.push(RankedPrediction::from_scores(&probs, truth.clone())?);
            }
            summarize_multilabel(&ranked, log_base)
        }
    }
}

/// Trains `model` in place and leaves it holding the parameters of the best
/// validation epoch, with the interaction sign fixed by
/// [`Classifier::orient_interactions`]. When `target` is given the best model
/// is also written there each time the validation metric improves.
pub fn train<S: Real>(
    model: &mut Classifier<S>,
    train_set: &[Instance],
    validation: &[Instance],
    config: &TrainConfig,
    target: Option<CheckpointTarget<'_>>,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let mut optimizer = Adam::new(config.optimizer, model.params());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(0);

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut best_params = model.params().clone();
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let started = Instant::now();

    for epoch in 1..=config.max_epochs {
        let mut total_loss = 0.0;
        for (b, batch) in epoch_batches(train_set.len(), config.batch_size, config.seed, epoch)?
            .into_iter()
            .enumerate()
        {
            let scale = S::from_f64_lossy(1.0 / batch.len() as f64);
            model.params_mut().zero_grad();
            for &i in &batch {
                let grads = {
                    let mut g = Graph::new(model.params());
                    let loss = model.loss(&mut g, &train_set[i], Mode::Train(&mut dropout_rng))?;
                    let value = g.scalar(loss).to_f64_lossy();
                    if !value.is_finite() {
                        model.params_mut().copy_values_from(&best_params)?;
                        return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
                    }
                    total_loss += value;
                    let scaled = g.scale(loss, scale);
                    g.backward(scaled)?
                };
                model.params_mut().accumulate(&grads);
            }
            if let Some(max_norm) = config.grad_clip {
                clip_grad_norm(model.params_mut(), max_norm);
            }
            if let Err(e) = optimizer.step(model.params_mut()) {
                model.params_mut().copy_values_from(&best_params)?;
                return Err(e);
            }
        }
        model.params_mut().clear_grads();

        let metric = evaluate(model, validation, config.log_base)?.headline();
        epochs.push(EpochRecord {
            epoch,
            train_loss: total_loss / train_set.len() as f64,
            validation_metric: metric,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
        if best.is_none_or(|(_, m)| metric > m) {
            best = Some((epoch, metric));
            since_best = 0;
            best_params = model.params().clone();
            if let Some(t) = &target {
                let mut oriented = model.clone();
                oriented.orient_interactions();
                save_checkpoint(t.dir, &oriented, t.vocab, t.class_names)?;
            }
        } else {
            since_best += 1;
            if since_best > config.patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }

    model.params_mut().copy_values_from(&best_params)?;
    model.orient_interactions();
    let (best_epoch, best_metric) = best.expect("at least one epoch runs");
    Ok(TrainReport {
        metric: match model.config().task {
            Task::Multiclass => "accuracy",
            Task::Multilabel => "f1",
        }
        .into(),
        epochs,
        best_epoch,
        best_validation_metric: best_metric,
        best_checkpoint: target.map(|t| t.dir.display().to_string()),
        stop_reason,
    })
}
