use std::fs;
use std::path::{Path, PathBuf};

use chrono::Duration;
use gctaf::data::{
    chronological_pairs, generate_synthetic, write_synthetic, Dataset, PartitionPair, SynthSpec,
};
use gctaf::metrics::{aggregate, AggregateReport, MetricsReport, Summary};
use gctaf::model::{Ablation, Checkpoint};
use gctaf::rng::Rng;
use gctaf::training::{evaluate, vlt_baseline, TrainConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{
    checkpoint, load, prepare, prepare_test, preprocessing_from, run_pair, split_and_prepare,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.gctaf";
pub const REPORT_FILE: &str = "report.csv";
pub const TEST_METRICS_FILE: &str = "test_metrics.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_RUNS_FILE: &str = "ablation_runs.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        k => CliError::Config(format!("{k:?}")),
    })
}

fn csv_row<I, T>(w: &mut csv::Writer<fs::File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mlp_label(units: &[usize]) -> String {
    format!("{units:?}")
}

/// `synth`: one dataset, or `partitions` consecutive ones in `P1..Pk`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.echo()?;
    let root = Rng::new(cfg.synth.seed);
    let k = cfg.synth.partitions.max(1);
    let base = &cfg.synth.spec;
    let mut written = Vec::new();
    for p in 0..k {
        let spec = SynthSpec {
            start_time: base.start_time
                + Duration::hours(base.cadence_hours * (p * base.n_instances) as i64),
            partition_id: Some(format!("P{}", p + 1)),
            world_seed: base.world_seed,
            ..base.clone()
        };
        let dir = if k == 1 {
            cfg.out.clone()
        } else {
            cfg.out.join(format!("P{}", p + 1))
        };
        let (ds, signals) = generate_synthetic(&spec, &root.split(p as u64))?;
        written.push(write_synthetic(&dir, &ds, &signals)?);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub selected_epoch: usize,
    pub validation: MetricsReport,
    pub test: Option<MetricsReport>,
}

/// `train`: filter, impute, normalize, train; writes the checkpoint, the
/// per-epoch report and, with a test partition, its metrics.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let train_path = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| CliError::Config("data.train is required".into()))?;
    let train_ds = load(train_path)?;
    let test_ds = cfg.data.test.as_deref().map(load).transpose()?;
    let prepared = split_and_prepare(&train_ds, test_ds.as_ref(), cfg.data.impute_k, &cfg.train)?;
    let mut effective = cfg.clone();
    effective.model.tau = prepared.train.tau;
    effective.model.n_features = prepared.train.n_features;
    effective.echo()?;

    let result = run_pair(
        &effective.model,
        &cfg.train,
        &prepared,
        &Rng::new(cfg.train.seed),
    )?;
    let ck = checkpoint(&result, &prepared.stats, cfg.data.impute_k);
    let ck_path = cfg.out.join(CHECKPOINT_FILE);
    ck.save(&ck_path)?;
    let report_path = cfg.out.join(REPORT_FILE);
    result
        .report
        .write_csv(&report_path)
        .map_err(CliError::io(&report_path))?;
    if let Some(t) = &result.test {
        write_json(&cfg.out.join(TEST_METRICS_FILE), t)?;
    }
    Ok(TrainSummary {
        selected_epoch: result.report.selected_epoch,
        validation: result.validation,
        test: result.test,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    pub pairs: Vec<MetricsReport>,
    pub aggregate: Option<AggregateReport>,
}

/// `eval`: scores each checkpoint on its test set (matched by position).
pub fn cmd_eval(checkpoints: &[PathBuf], tests: &[PathBuf], cfg: &RunConfig) -> Result<EvalOutput> {
    if checkpoints.is_empty() || checkpoints.len() != tests.len() {
        return Err(CliError::Config(format!(
            "need one test set per checkpoint, got {} checkpoints and {} test sets",
            checkpoints.len(),
            tests.len()
        )));
    }
    cfg.echo()?;
    let mut pairs = Vec::new();
    for (i, (ck_path, test_path)) in checkpoints.iter().zip(tests).enumerate() {
        let ck = Checkpoint::load(ck_path)?;
        let (stats, k) = preprocessing_from(&ck)?;
        let test = prepare_test(&load(test_path)?, k, &stats)?;
        let ev = evaluate(&ck.params, &ck.config, &test, cfg.train.eval_batch_size)?;
        write_json(
            &cfg.out.join(format!("eval_pair{}.json", i + 1)),
            &ev.report,
        )?;
        pairs.push(ev.report);
    }
    let aggregate = if pairs.len() > 1 {
        let agg = aggregate(&pairs)?;
        write_json(&cfg.out.join(AGGREGATE_FILE), &agg)?;
        Some(agg)
    } else {
        None
    };
    Ok(EvalOutput { pairs, aggregate })
}

fn load_pairs(cfg: &RunConfig) -> Result<Vec<PartitionPair>> {
    if cfg.data.partitions.len() < 2 {
        return Err(CliError::Config(
            "data.partitions needs at least two partitions".into(),
        ));
    }
    let parts: Vec<Dataset> = cfg
        .data
        .partitions
        .iter()
        .map(|p| load(p))
        .collect::<Result<_>>()?;
    Ok(chronological_pairs(&parts)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: Ablation,
    pub label: &'static str,
    pub tss: Summary,
    pub aggregate: AggregateReport,
}

/// `ablate`: every variant on every pair and seed; one CSV row per variant.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<VariantSummary>> {
    let pairs = load_pairs(cfg)?;
    cfg.echo()?;
    let seeds = if cfg.ablate.seeds.is_empty() {
        vec![cfg.train.seed]
    } else {
        cfg.ablate.seeds.clone()
    };
    let prepared = pairs
        .iter()
        .map(|p| {
            prepare(
                &p.train,
                &p.validation,
                Some(&p.test),
                cfg.data.impute_k,
                &cfg.train,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let runs_path = cfg.out.join(ABLATION_RUNS_FILE);
    let mut runs = csv_writer(&runs_path)?;
    csv_row(
        &mut runs,
        &runs_path,
        [
            "variant",
            "seed",
            "pair",
            "selected_epoch",
            "val_tss",
            "test_tss",
        ],
    )?;
    let mut summaries = Vec::new();
    for &variant in &cfg.ablate.variants {
        let model = gctaf::model::ModelConfig {
            ablation: variant,
            ..cfg.model.clone()
        };
        let mut reports = Vec::new();
        for &seed in &seeds {
            for (i, (pair, data)) in pairs.iter().zip(&prepared).enumerate() {
                let train_cfg = TrainConfig {
                    seed,
                    ..cfg.train.clone()
                };
                let r = run_pair(&model, &train_cfg, data, &Rng::new(seed).split(i as u64))?;
                let test = r.test.expect("pairs carry a test set");
                log::info!(
                    "{} {} seed {seed}: test TSS {}",
                    variant.label(),
                    pair.name,
                    fmt(test.tss)
                );
                csv_row(
                    &mut runs,
                    &runs_path,
                    [
                        variant.label().to_string(),
                        seed.to_string(),
                        pair.name.clone(),
                        r.report.selected_epoch.to_string(),
                        fmt(r.validation.tss),
                        fmt(test.tss),
                    ],
                )?;
                reports.push(test);
            }
        }
        let agg = aggregate(&reports)?;
        summaries.push(VariantSummary {
            variant,
            label: variant.label(),
            tss: agg.tss,
            aggregate: agg,
        });
    }
    runs.flush().map_err(CliError::io(&runs_path))?;

    let path = cfg.out.join(ABLATION_FILE);
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["variant", "mean_tss", "std_tss", "n"])?;
    for s in &summaries {
        csv_row(
            &mut w,
            &path,
            [
                s.label.to_string(),
                fmt(s.tss.mean),
                fmt(s.tss.std),
                s.tss.n.to_string(),
            ],
        )?;
    }
    w.flush().map_err(CliError::io(&path))?;
    write_json(&cfg.out.join("ablation.json"), &summaries)?;
    Ok(summaries)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub head_size: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub mlp_units: Vec<usize>,
    pub global_tokens: usize,
    pub dropout: f64,
    pub num_blocks: usize,
    pub learning_rate: f64,
    pub val_tss: Option<f64>,
    pub test_tss: Option<f64>,
}

/// `sweep`: trains every grid point on each training partition and reports
/// mean validation TSS (and mean test TSS when partitions pair up).
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let points = cfg.sweep.points(&cfg.model, cfg.train.learning_rate)?;
    let prepared = match cfg.data.partitions.len() {
        0 => return Err(CliError::Config("data.partitions is empty".into())),
        1 => vec![split_and_prepare(
            &load(&cfg.data.partitions[0])?,
            None,
            cfg.data.impute_k,
            &cfg.train,
        )?],
        _ => load_pairs(cfg)?
            .iter()
            .map(|p| {
                prepare(
                    &p.train,
                    &p.validation,
                    Some(&p.test),
                    cfg.data.impute_k,
                    &cfg.train,
                )
            })
            .collect::<Result<_>>()?,
    };
    cfg.echo()?;
    let mut rows = Vec::new();
    for point in &points {
        let train_cfg = TrainConfig {
            learning_rate: point.learning_rate,
            ..cfg.train.clone()
        };
        let mut val = Vec::new();
        let mut test = Vec::new();
        for (i, data) in prepared.iter().enumerate() {
            let r = run_pair(
                &point.model,
                &train_cfg,
                data,
                &Rng::new(cfg.train.seed).split(i as u64),
            )?;
            val.push(r.validation.tss);
            if let Some(t) = r.test {
                test.push(t.tss);
            }
        }
        let m = &point.model;
        rows.push(SweepRow {
            head_size: m.head_size,
            heads: m.heads,
            ff_dim: m.ff_dim,
            mlp_units: m.mlp_units.clone(),
            global_tokens: m.global_tokens,
            dropout: m.dropout,
            num_blocks: m.num_blocks,
            learning_rate: point.learning_rate,
            val_tss: Summary::of(val).mean,
            test_tss: if test.is_empty() {
                None
            } else {
                Summary::of(test).mean
            },
        });
        log::info!("sweep point {}/{} done", rows.len(), points.len());
    }
    let path = cfg.out.join(SWEEP_FILE);
    let mut w = csv_writer(&path)?;
    csv_row(
        &mut w,
        &path,
        [
            "head_size",
            "heads",
            "ff_dim",
            "mlp_units",
            "global_tokens",
            "dropout",
            "num_blocks",
            "learning_rate",
            "val_tss",
            "test_tss",
        ],
    )?;
    for r in &rows {
        csv_row(
            &mut w,
            &path,
            [
                r.head_size.to_string(),
                r.heads.to_string(),
                r.ff_dim.to_string(),
                mlp_label(&r.mlp_units),
                r.global_tokens.to_string(),
                r.dropout.to_string(),
                r.num_blocks.to_string(),
                r.learning_rate.to_string(),
                fmt(r.val_tss),
                fmt(r.test_tss),
            ],
        )?;
    }
    w.flush().map_err(CliError::io(&path))?;
    Ok(rows)
}

/// `baseline`: the last-timestamp logistic model on every pair.
pub fn cmd_baseline(cfg: &RunConfig) -> Result<EvalOutput> {
    let pairs = load_pairs(cfg)?;
    cfg.echo()?;
    let mut reports = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let data = prepare(
            &p.train,
            &p.validation,
            Some(&p.test),
            cfg.data.impute_k,
            &cfg.train,
        )?;
        let test = data.test.as_ref().expect("pairs carry a test set");
        let r = vlt_baseline(&data.train, test, &cfg.vlt)?;
        write_json(&cfg.out.join(format!("baseline_pair{}.json", i + 1)), &r)?;
        reports.push(r);
    }
    let agg = aggregate(&reports)?;
    write_json(&cfg.out.join(AGGREGATE_FILE), &agg)?;
    Ok(EvalOutput {
        pairs: reports,
        aggregate: Some(agg),
    })
}
