//! Vector-of-last-timestamp baseline: multinomial logistic regression on the
//! feature vector at the final step of each window, fitted full-batch with
//! Adam from zero weights.

use serde::{Deserialize, Serialize};

use super::{cross_entropy_loss, AdamConfig, AdamState, Result, TrainError};
use crate::data::BinaryDataset;
use crate::metrics::{confusion, report, MetricsReport};
use crate::model::argmax_rows;
use crate::params::{
    bind_frozen, bind_trainable, flat_grads, flatten, unflatten_into, LinearParams,
};
use crate::tensor::{Array, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VltConfig {
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for VltConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            steps: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VltModel {
    pub linear: LinearParams<Array>,
}

fn last_steps(data: &BinaryDataset) -> Result<Tensor> {
    let n = data.n_features;
    let mut v = Vec::with_capacity(data.len() * n);
    for i in 0..data.len() {
        v.extend_from_slice(data.last_step(i));
    }
    Ok(Tensor::new(&[data.len(), n], v)?)
}

impl VltModel {
    pub fn predict(&self, data: &BinaryDataset) -> Result<Vec<usize>> {
        let x = last_steps(data)?;
        let logits = self.linear.map(&mut bind_frozen).forward(&x)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn vlt_fit(train: &BinaryDataset, cfg: &VltConfig) -> Result<VltModel> {
    if train.is_empty() {
        return Err(TrainError::Contract("training set is empty".into()));
    }
    let n = train.n_features;
    let mut linear = LinearParams {
        w: Array::zeros(&[n, 2]),
        b: Array::zeros(&[2]),
    };
    let x = last_steps(train)?;
    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut flat = flatten(&linear);
    let mut state = AdamState::new(flat.len());
    for step in 1..=cfg.steps {
        let bound = linear.map(&mut bind_trainable);
        let loss = cross_entropy_loss(&bound.forward(&x)?, &train.labels)?;
        if !loss.item().is_finite() {
            return Err(TrainError::NonFinite {
                epoch: step,
                batch: 1,
                loss: loss.item(),
            });
        }
        loss.backward()?;
        state.step(&mut flat, &flat_grads(&bound), &adam_cfg);
        unflatten_into(&mut linear, &flat);
    }
    Ok(VltModel { linear })
}

/// Fits on `train` and scores on `test` with the standard report.
pub fn vlt_baseline(
    train: &BinaryDataset,
    test: &BinaryDataset,
    cfg: &VltConfig,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(TrainError::Contract("test set is empty".into()));
    }
    let model = vlt_fit(train, cfg)?;
    let preds = model.predict(test)?;
    Ok(report(&confusion(&preds, &test.labels)?))
}
