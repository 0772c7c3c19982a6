//! Shared preprocessing and train/evaluate plumbing behind the subcommands.

use std::path::{Path, PathBuf};

use gctaf::data::{
    check_disjoint, filter_training_nf_to_fq, impute_fpcknn, load_dataset, undersample,
    validation_split, zscore_apply, zscore_fit, BinaryDataset, DataError, Dataset, ZScore,
    MANIFEST_FILE,
};
use gctaf::metrics::MetricsReport;
use gctaf::model::{Checkpoint, GctafParams, ModelConfig};
use gctaf::rng::Rng;
use gctaf::tensor::Array;
use gctaf::training::{evaluate, train, TrainConfig, TrainReport};

use crate::error::{CliError, Result};

pub const PREPROCESS_MEAN: &str = "preprocess.mean";
pub const PREPROCESS_STD: &str = "preprocess.std";
pub const PREPROCESS_IMPUTE_K: &str = "preprocess.impute_k";

/// Accepts a dataset directory or a manifest file.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load(path: &Path) -> Result<Dataset> {
    let mut ds = load_dataset(&manifest_path(path))?;
    ds.sort_canonical();
    Ok(ds)
}

/// Model-ready splits of one train/test pair.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: BinaryDataset,
    pub validation: BinaryDataset,
    pub test: Option<BinaryDataset>,
    pub stats: ZScore,
}

/// Train-side preprocessing on an already split pair: non-flare filtering
/// and optional undersampling of the training part, imputation of every
/// part, and z-scoring with statistics fitted on the training part alone.
pub fn prepare(
    train_part: &Dataset,
    validation: &Dataset,
    test: Option<&Dataset>,
    impute_k: usize,
    train_cfg: &TrainConfig,
) -> Result<Prepared> {
    let mut train_part = filter_training_nf_to_fq(train_part)?;
    if let Some(ratio) = train_cfg.undersample_ratio {
        train_part = undersample(&train_part, ratio, &mut Rng::new(train_cfg.seed).split(50))?;
    }
    if train_part.is_empty() {
        return Err(CliError::Config(
            "training split is empty after filtering".into(),
        ));
    }
    let train_part = impute_fpcknn(&train_part, impute_k)?;
    let stats = zscore_fit(&train_part)?;
    let finish = |d: &Dataset| -> Result<BinaryDataset> {
        let imputed = impute_fpcknn(d, impute_k)?;
        Ok(zscore_apply(&imputed, &stats)?.to_binary()?)
    };
    Ok(Prepared {
        train: zscore_apply(&train_part, &stats)?.to_binary()?,
        validation: finish(validation)?,
        test: test.map(finish).transpose()?,
        stats,
    })
}

/// Holds out the chronological validation tail of `train_partition` and
/// prepares it with an optional test partition, after the leakage check.
pub fn split_and_prepare(
    train_partition: &Dataset,
    test: Option<&Dataset>,
    impute_k: usize,
    train_cfg: &TrainConfig,
) -> Result<Prepared> {
    if let Some(t) = test {
        check_disjoint(train_partition, t)?;
    }
    let (train_part, validation) = validation_split(train_partition);
    prepare(&train_part, &validation, test, impute_k, train_cfg)
}

/// Imputes and normalizes a test set with stored training statistics.
pub fn prepare_test(test: &Dataset, impute_k: usize, stats: &ZScore) -> Result<BinaryDataset> {
    if test.is_empty() {
        return Err(DataError::Contract("test set is empty".into()).into());
    }
    let imputed = impute_fpcknn(test, impute_k)?;
    Ok(zscore_apply(&imputed, stats)?.to_binary()?)
}

/// Copies the data's window shape into the model configuration.
pub fn fit_model_to_data(model: &ModelConfig, data: &BinaryDataset) -> ModelConfig {
    if model.tau != data.tau || model.n_features != data.n_features {
        log::info!(
            "model input set to tau = {}, n_features = {} from the data",
            data.tau,
            data.n_features
        );
    }
    ModelConfig {
        tau: data.tau,
        n_features: data.n_features,
        ..model.clone()
    }
}

#[derive(Debug, Clone)]
pub struct PairResult {
    pub model: ModelConfig,
    pub params: GctafParams<Array>,
    pub report: TrainReport,
    pub validation: MetricsReport,
    pub test: Option<MetricsReport>,
}

/// Trains on a prepared pair and scores the selected parameters.
pub fn run_pair(
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &Prepared,
    rng: &Rng,
) -> Result<PairResult> {
    if data.validation.is_empty() {
        return Err(CliError::Config("validation split is empty".into()));
    }
    let model = fit_model_to_data(model, &data.train);
    let outcome = train(&model, train_cfg, &data.train, &data.validation, rng)?;
    let validation = outcome
        .report
        .selected()
        .val
        .expect("validation set is non-empty");
    let test = match &data.test {
        Some(t) => Some(evaluate(&outcome.params, &model, t, train_cfg.eval_batch_size)?.report),
        None => None,
    };
    Ok(PairResult {
        model,
        params: outcome.params,
        report: outcome.report,
        validation,
        test,
    })
}

/// Checkpoint carrying the preprocessing state needed at test time.
pub fn checkpoint(result: &PairResult, stats: &ZScore, impute_k: usize) -> Checkpoint {
    let mut ck = Checkpoint::new(result.model.clone(), result.params.clone());
    let n = stats.mean.len();
    ck.extra.insert(
        PREPROCESS_MEAN.into(),
        Array::new(vec![n], stats.mean.clone()).expect("length matches"),
    );
    ck.extra.insert(
        PREPROCESS_STD.into(),
        Array::new(vec![n], stats.std.clone()).expect("length matches"),
    );
    ck.extra
        .insert(PREPROCESS_IMPUTE_K.into(), Array::scalar(impute_k as f64));
    ck
}

/// Normalization statistics and imputation width stored in a checkpoint.
pub fn preprocessing_from(ck: &Checkpoint) -> Result<(ZScore, usize)> {
    let get = |k: &str| {
        ck.extra
            .get(k)
            .ok_or_else(|| CliError::Config(format!("checkpoint lacks {k}")))
    };
    let stats = ZScore {
        mean: get(PREPROCESS_MEAN)?.data().to_vec(),
        std: get(PREPROCESS_STD)?.data().to_vec(),
    };
    let k = get(PREPROCESS_IMPUTE_K)?
        .data()
        .first()
        .copied()
        .unwrap_or(3.0) as usize;
    Ok((stats, k))
}
