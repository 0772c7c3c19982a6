use std::path::PathBuf;

use gctaf::data::DataError;
use gctaf::metrics::MetricsError;
use gctaf::model::{CheckpointError, ModelError};
use gctaf::training::TrainError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const LEAKAGE: i32 = 4;
    pub const NUMERIC: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot parse config {path}: {msg}")]
    ConfigParse { path: PathBuf, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(e) => data_code(e),
            CliError::Train(e) => match e {
                TrainError::Data(d) => data_code(d),
                TrainError::NonFinite { .. } => exit::NUMERIC,
                TrainError::Config(_)
                | TrainError::Contract(_)
                | TrainError::Model(ModelError::Config(_)) => exit::VALIDATION,
                _ => exit::OTHER,
            },
            CliError::Model(ModelError::Config(_)) => exit::VALIDATION,
            CliError::Checkpoint(CheckpointError::Format { .. }) => exit::PARSE,
            CliError::Checkpoint(CheckpointError::Model(_)) => exit::VALIDATION,
            CliError::ConfigParse { .. } => exit::PARSE,
            CliError::Config(_) => exit::VALIDATION,
            _ => exit::OTHER,
        }
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::Parse { .. } => exit::PARSE,
        DataError::Validation { .. } | DataError::Config(_) | DataError::Contract(_) => {
            exit::VALIDATION
        }
        DataError::Leakage(_) => exit::LEAKAGE,
        _ => exit::OTHER,
    }
}
