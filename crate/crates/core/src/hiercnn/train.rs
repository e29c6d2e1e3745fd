//! Minibatch training with Adam and validation-AUC early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradients, l2_term, predict, Gradients, Mode, ModelParams};
use crate::corpus::PatientRecord;
use crate::par::{self, Execution};
use crate::tensor::{adam_step, l2_penalty, AdamConfig, OptimState, Tensor};
use crate::{eval, seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the sentence-level replication loss.
    pub lambda: f64,
    /// l2 coefficient on the final dense weights.
    pub l2: f64,
    pub keep_prob: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Set from the run-wide seed, never from config files.
    #[serde(skip)]
    pub seed: u64,
    pub freeze_embeddings: bool,
    /// Start from pretrained word vectors; read by the pipeline, which loads
    /// them before calling [`train`].
    pub pretrained: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            l2: 1e-4,
            keep_prob: 0.8,
            adam: AdamConfig::default(),
            batch_size: 16,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            freeze_embeddings: false,
            pretrained: true,
            execution: Execution::available(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep_prob must lie in (0, 1], got {}",
                self.keep_prob
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Summed per-record training objective over the epoch (under dropout)
    /// plus the l2 term at the end of the epoch.
    pub train_loss: f64,
    /// `None` when the validation set is empty or single-class.
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
}

fn validation_auc(params: &ModelParams, data: &[(PatientRecord, bool)], exec: Execution) -> Result<Option<f64>> {
    let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
    if !labels.contains(&true) || !labels.contains(&false) {
        return Ok(None);
    }
    let scores = par::map(exec, data, |(r, _)| predict(r, params).map(|p| p.p_doc))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    eval::auc(&scores, &labels).map(Some)
}

/// Trains `params` on `train`, selecting the epoch with the best validation
/// AUC (earliest on ties). Without a usable validation set the last epoch is
/// returned.
///
/// Each step averages per-record gradients over the batch and adds the full
/// l2 gradient. Per-record gradients are computed in parallel and reduced in
/// batch order, so results do not depend on the thread count.
pub fn train(
    mut params: ModelParams,
    train: &[(PatientRecord, bool)],
    validation: &[(PatientRecord, bool)],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let frozen = params.embeddings.clone();
    let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let mut state = OptimState::new(config.adam, shapes.iter().map(|s| s.as_slice()));

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut seed::rng(config.seed, &[0x7A1, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let results = par::map(config.execution, batch, |&i| {
                let mode = Mode::Train {
                    keep_prob: config.keep_prob,
                    seed: seed::derive(config.seed, &[epoch as u64, step as u64, i as u64]),
                };
                loss_and_gradients(&train[i].0, train[i].1, &params, config.lambda, mode)
            });
            let mut batch_grad = Gradients::zeros(&params);
            let mut batch_losses = Vec::with_capacity(batch.len());
            let scale = 1.0 / batch.len() as f64;
            for r in results {
                let (loss, g) = r?;
                batch_losses.push(loss);
                batch_grad.add_scaled(&g, scale);
            }
            let batch_loss: f64 = batch_losses.iter().sum();
            if !batch_loss.is_finite() || !batch_grad.is_finite() {
                let dump: Vec<String> = batch
                    .iter()
                    .zip(&batch_losses)
                    .map(|(&i, l)| format!("{}: loss {l}", train[i].0.patient_id))
                    .collect();
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient in epoch {epoch}, step {step}; batch [{}]",
                    dump.join(", ")
                )));
            }
            epoch_loss += batch_loss;

            let mut grads = batch_grad.to_dense(&params);
            let (_, l2_grad) = l2_penalty(&params.dense_w, config.l2)?;
            let dense_w_index = grads.len() - 4;
            grads[dense_w_index].add_assign(&l2_grad)?;
            if config.freeze_embeddings {
                grads[0].fill(0.0);
            }
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut param_refs = params.tensors_mut();
            adam_step(&mut param_refs, &grad_refs, &mut state)?;
            if config.freeze_embeddings {
                params.embeddings = frozen.clone();
            } else {
                params.embeddings.row_mut(crate::corpus::vocab::PAD).fill(0.0);
            }
        }
        let train_loss = epoch_loss + l2_term(&params, config.l2);
        let val_auc = validation_auc(&params, validation, config.execution)?;
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4}, validation AUC {}",
            val_auc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        );
        history.push(EpochStats { epoch, train_loss, val_auc });

        match (val_auc, &best) {
            (Some(auc), Some((b, _, _))) if auc <= *b => since_best += 1,
            (Some(auc), _) => {
                best = Some((auc, epoch, params.clone()));
                since_best = 0;
            }
            (None, _) => {}
        }
        if best.is_some() && since_best >= config.patience.max(1) {
            break;
        }
    }
    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, epoch),
        None => (params, history.len()),
    };
    Ok(TrainOutcome { params, history, best_epoch })
}
