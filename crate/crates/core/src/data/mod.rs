//! Instance ingestion, preprocessing and the synthetic planted-pattern
//! generator.
//!
//! An instance is a τ×N window of feature values (row-major, one row per
//! timestamp) with a five-class flare label. Missing cells are `None` until
//! imputation fills them.

mod impute;
mod io;
mod normalize;
mod partition;
mod synth;

use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use impute::impute_fpcknn;
pub use io::{load_dataset, write_dataset, InstanceRecord, DATASET_META_FILE, MANIFEST_FILE};
pub use normalize::{zscore_apply, zscore_fit, ZScore, STD_FLOOR};
pub use partition::{
    check_disjoint, chronological_pairs, filter_training_nf_to_fq, undersample, validation_split,
    PartitionPair, VALIDATION_FRACTION,
};
pub use synth::{
    generate_synthetic, write_synthetic, Pattern, SignalRecord, SynthSpec, SIGNAL_FILE,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}:{column}: {msg}")]
    Parse {
        file: PathBuf,
        line: u64,
        column: usize,
        msg: String,
    },
    #[error("validation error in {file}: {msg}")]
    Validation { file: PathBuf, msg: String },
    #[error("temporal leakage: {0}")]
    Leakage(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("imputation failed for instances: {}", .0.join(", "))]
    Imputation(Vec<String>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Five flare categories by peak soft X-ray flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlareClass {
    FQ,
    B,
    C,
    M,
    X,
}

impl FlareClass {
    pub const ALL: [FlareClass; 5] = [
        FlareClass::FQ,
        FlareClass::B,
        FlareClass::C,
        FlareClass::M,
        FlareClass::X,
    ];

    /// F = {M, X}; NF = {FQ, B, C}.
    pub fn is_flare(self) -> bool {
        matches!(self, FlareClass::M | FlareClass::X)
    }

    /// Binary class id: 0 = NF, 1 = F.
    pub fn binary(self) -> usize {
        usize::from(self.is_flare())
    }
}

impl fmt::Display for FlareClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvtsInstance {
    pub tau: usize,
    pub n_features: usize,
    /// Row-major τ×N; `None` marks a missing cell.
    pub values: Vec<Option<f64>>,
    pub label: FlareClass,
    pub start_time: DateTime<Utc>,
    pub source_id: String,
    /// File name relative to the dataset directory, when loaded from disk.
    pub file: Option<String>,
}

impl MvtsInstance {
    pub fn get(&self, t: usize, f: usize) -> Option<f64> {
        self.values[t * self.n_features + f]
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Identifier used in error messages.
    pub fn describe(&self) -> String {
        match &self.file {
            Some(f) => f.clone(),
            None => format!("{}@{}", self.source_id, self.start_time.to_rfc3339()),
        }
    }
}

/// Dataset-level metadata kept next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetMeta {
    pub tau: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub t_obs_hours: f64,
    pub t_pred_hours: f64,
    pub partition_id: Option<String>,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self {
            tau: 0,
            n_features: 0,
            feature_names: Vec::new(),
            t_obs_hours: 12.0,
            t_pred_hours: 24.0,
            partition_id: None,
        }
    }
}

impl DatasetMeta {
    pub fn new(tau: usize, n_features: usize) -> Self {
        Self {
            tau,
            n_features,
            feature_names: default_feature_names(n_features),
            ..Self::default()
        }
    }
}

pub fn default_feature_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i:02}")).collect()
}

/// Role of a dataset in the protocol; some operations are only legal on one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    #[default]
    Unassigned,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub instances: Vec<MvtsInstance>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, instances: Vec<MvtsInstance>) -> Self {
        Self {
            meta,
            instances,
            split: SplitTag::Unassigned,
        }
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Count of each five-class label, in [`FlareClass::ALL`] order.
    pub fn class_counts(&self) -> [usize; 5] {
        let mut counts = [0; 5];
        for inst in &self.instances {
            counts[inst.label as usize] += 1;
        }
        counts
    }

    /// (earliest, latest) start time.
    pub fn time_range(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let min = self.instances.iter().map(|i| i.start_time).min()?;
        let max = self.instances.iter().map(|i| i.start_time).max()?;
        Some((min, max))
    }

    /// Sorts into canonical order: start time, then source id.
    pub fn sort_canonical(&mut self) {
        self.instances
            .sort_by(|a, b| (a.start_time, &a.source_id).cmp(&(b.start_time, &b.source_id)));
    }

    /// Dense binary view; fails if any cell is still missing.
    pub fn to_binary(&self) -> Result<BinaryDataset> {
        let mut values = Vec::with_capacity(self.len() * self.meta.tau * self.meta.n_features);
        let mut labels = Vec::with_capacity(self.len());
        for inst in &self.instances {
            if inst.tau != self.meta.tau || inst.n_features != self.meta.n_features {
                return Err(DataError::Validation {
                    file: inst.describe().into(),
                    msg: format!(
                        "shape {}x{} differs from dataset {}x{}",
                        inst.tau, inst.n_features, self.meta.tau, self.meta.n_features
                    ),
                });
            }
            for v in &inst.values {
                values.push(v.ok_or_else(|| {
                    DataError::Contract(format!("{} still has missing cells", inst.describe()))
                })?);
            }
            labels.push(inst.label.binary());
        }
        Ok(BinaryDataset {
            tau: self.meta.tau,
            n_features: self.meta.n_features,
            values,
            labels,
        })
    }
}

/// Dense instances with consolidated labels, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    pub tau: usize,
    pub n_features: usize,
    /// `len × τ × N`, row-major.
    pub values: Vec<f64>,
    /// 0 = NF, 1 = F.
    pub labels: Vec<usize>,
}

impl BinaryDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn instance(&self, i: usize) -> &[f64] {
        let w = self.tau * self.n_features;
        &self.values[i * w..(i + 1) * w]
    }

    /// `[indices.len(), τ, N]` input tensor.
    pub fn batch(&self, indices: &[usize]) -> std::result::Result<Tensor, TensorError> {
        let mut data = Vec::with_capacity(indices.len() * self.tau * self.n_features);
        for &i in indices {
            data.extend_from_slice(self.instance(i));
        }
        Tensor::new(&[indices.len(), self.tau, self.n_features], data)
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Feature vector at the final timestamp of instance `i`.
    pub fn last_step(&self, i: usize) -> &[f64] {
        let inst = self.instance(i);
        &inst[(self.tau - 1) * self.n_features..]
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().sum()
    }
}
