//! Mini-batch training with validation-based model selection, batched
//! inference, and the last-timestamp logistic baseline.

mod adam;
mod vlt;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BinaryDataset, DataError};
use crate::metrics::{confusion, report, MetricsError, MetricsReport};
use crate::model::{argmax_rows, forward, init_params, GctafParams, ModelConfig, ModelError};
use crate::params::{bind_frozen, bind_trainable, flat_grads, flatten, unflatten_into};
use crate::rng::Rng;
use crate::tensor::{cross_entropy, Array, Tensor, TensorError};

pub use adam::{AdamConfig, AdamState};
pub use vlt::{vlt_baseline, vlt_fit, VltConfig, VltModel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest validation TSS; an undefined TSS ranks below every value.
    #[default]
    Tss,
    /// Lowest validation loss.
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub selection: Selection,
    pub seed: u64,
    /// Keep at most this many non-flare training instances per flare one.
    pub undersample_ratio: Option<f64>,
    /// Instances per inference batch during evaluation.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 20,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            selection: Selection::Tss,
            seed: 0,
            undersample_ratio: None,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(TrainError::Config(
                "epochs and batch sizes must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0
        {
            return Err(TrainError::Config(
                "Adam needs beta1, beta2 in [0, 1) and eps > 0".into(),
            ));
        }
        if let Some(r) = self.undersample_ratio {
            if !(r > 0.0 && r.is_finite()) {
                return Err(TrainError::Config(format!(
                    "undersample_ratio must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Mean cross-entropy of `logits: [B, C]` against class ids, computed through
/// log-sum-exp. An out-of-range label is a contract error.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    cross_entropy(logits, labels).map_err(|e| match e {
        TensorError::Invalid { msg, .. } => TrainError::Contract(msg),
        e => e.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val: Option<MetricsReport>,
    /// Wall-clock seconds; excluded from the CSV so reports replay exactly.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub selected_epoch: usize,
    pub selection: Selection,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "epoch",
    "train_loss",
    "val_loss",
    "val_tss",
    "val_hss2",
    "val_gs",
    "val_acc",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainReport {
    pub fn selected(&self) -> &EpochRecord {
        &self.epochs[self.selected_epoch - 1]
    }

    /// CSV with one row per epoch; undefined values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for e in &self.epochs {
            let v = e.val.as_ref();
            let row = [
                e.epoch.to_string(),
                e.train_loss.to_string(),
                cell(e.val_loss),
                cell(v.and_then(|r| r.tss)),
                cell(v.and_then(|r| r.hss2)),
                cell(v.and_then(|r| r.gs)),
                cell(v.and_then(|r| r.accuracy)),
            ];
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::File::create(path)?.write_all(self.to_csv().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy.
    pub loss: f64,
    pub logits: Vec<f64>,
    pub predictions: Vec<usize>,
    pub report: MetricsReport,
}

/// Dropout-off inference over a whole dataset. Batches run concurrently and
/// are reduced in index order, so results do not depend on the thread count.
pub fn evaluate(
    params: &GctafParams<Array>,
    cfg: &ModelConfig,
    data: &BinaryDataset,
    batch_size: usize,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(TrainError::Contract(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    if data.tau != cfg.tau || data.n_features != cfg.n_features {
        return Err(DataError::Validation {
            file: "<evaluation data>".into(),
            msg: format!(
                "data is {}x{}, model expects {}x{}",
                data.tau, data.n_features, cfg.tau, cfg.n_features
            ),
        }
        .into());
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(batch_size.max(1)).collect();
    let parts: Vec<Result<(Vec<f64>, f64)>> = chunks
        .par_iter()
        .map(|idx| {
            let bound = params.map(&mut bind_frozen);
            let x = data.batch(idx)?;
            let logits = forward(&bound, cfg, &x, false, &mut Rng::new(0))?;
            let loss = cross_entropy_loss(&logits, &data.batch_labels(idx))?.item();
            Ok((logits.data().to_vec(), loss * idx.len() as f64))
        })
        .collect();
    let mut logits = Vec::with_capacity(data.len() * cfg.num_classes);
    let mut total = 0.0;
    for p in parts {
        let (l, s) = p?;
        logits.extend(l);
        total += s;
    }
    let t = Tensor::new(&[data.len(), cfg.num_classes], logits.clone())?;
    let predictions = argmax_rows(&t);
    let cm = confusion(&predictions, &data.labels)?;
    Ok(Evaluation {
        loss: total / data.len() as f64,
        logits,
        predictions,
        report: report(&cm),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the selected epoch.
    pub params: GctafParams<Array>,
    pub report: TrainReport,
}

/// Is `new` strictly better than `best` under the selection rule?
fn improves(selection: Selection, new: &EpochRecord, best: &EpochRecord) -> bool {
    match selection {
        Selection::Tss => {
            let a = new.val.as_ref().and_then(|r| r.tss);
            let b = best.val.as_ref().and_then(|r| r.tss);
            match (a, b) {
                (Some(a), Some(b)) => a > b,
                (Some(_), None) => true,
                _ => false,
            }
        }
        Selection::Loss => match (new.val_loss, best.val_loss) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        },
    }
}

/// Trains from fresh parameters. Stream layout under `rng`: split 1 seeds the
/// initialization, split 2 the per-epoch shuffles, split 3 the dropout masks
/// (per epoch, then per batch).
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &BinaryDataset,
    val_set: &BinaryDataset,
    rng: &Rng,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Contract("training set is empty".into()));
    }
    if train_set.tau != model_cfg.tau || train_set.n_features != model_cfg.n_features {
        return Err(DataError::Validation {
            file: "<training data>".into(),
            msg: format!(
                "data is {}x{}, model expects {}x{}",
                train_set.tau, train_set.n_features, model_cfg.tau, model_cfg.n_features
            ),
        }
        .into());
    }
    let mut params = init_params(model_cfg, &rng.split(1))?;
    let mut flat = flatten(&params);
    let mut adam = AdamState::new(flat.len());
    let adam_cfg = train_cfg.adam();
    let shuffle_root = rng.split(2);
    let dropout_root = rng.split(3);

    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(usize, GctafParams<Array>)> = None;
    for epoch in 1..=train_cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        shuffle_root.split(epoch as u64).shuffle(&mut order);
        let epoch_dropout = dropout_root.split(epoch as u64);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(train_cfg.batch_size).enumerate() {
            let bound = params.map(&mut bind_trainable);
            let x = train_set.batch(idx)?;
            let logits = forward(
                &bound,
                model_cfg,
                &x,
                true,
                &mut epoch_dropout.split(b as u64),
            )?;
            let loss = cross_entropy_loss(&logits, &train_set.batch_labels(idx))?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b + 1,
                    loss: value,
                });
            }
            loss.backward()?;
            let grads = flat_grads(&bound);
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                log::error!("non-finite gradient at flat index {i}");
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b + 1,
                    loss: value,
                });
            }
            adam.step(&mut flat, &grads, &adam_cfg);
            unflatten_into(&mut params, &flat);
            loss_sum += value * idx.len() as f64;
        }
        let (val_loss, val) = if val_set.is_empty() {
            (None, None)
        } else {
            let ev = evaluate(&params, model_cfg, val_set, train_cfg.eval_batch_size)?;
            (Some(ev.loss), Some(ev.report))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.5} val_loss {} val_tss {} ({:.1}s)",
            record.train_loss,
            cell(record.val_loss),
            cell(record.val.as_ref().and_then(|r| r.tss)),
            record.seconds
        );
        let take = match &best {
            None => true,
            Some((e, _)) => improves(train_cfg.selection, &record, &epochs[e - 1]),
        };
        if take {
            best = Some((epoch, params.clone()));
        }
        epochs.push(record);
    }
    let (selected_epoch, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        report: TrainReport {
            epochs,
            selected_epoch,
            selection: train_cfg.selection,
        },
    })
}
