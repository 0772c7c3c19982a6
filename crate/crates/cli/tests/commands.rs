use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_MODEL: &[&str] = &[
    "--head-size",
    "4",
    "--heads",
    "1",
    "--ff-dim",
    "4",
    "--mlp",
    "4",
    "--global-tokens",
    "2",
];

fn gctaf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gctaf"))
        .args(args)
        .env("GCTAF_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gctaf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `k` consecutive small partitions under `dir` (or one directly into
/// it) and returns their paths.
fn partitions(dir: &Path, k: usize, seed: u64) -> Vec<PathBuf> {
    ok(&[
        "synth",
        "--out",
        s(dir),
        "--seed",
        &seed.to_string(),
        "--n",
        "100",
        "--tau",
        "8",
        "--features",
        "3",
        "--m",
        "2",
        "--signal-features",
        "2",
        "--imbalance",
        "0.2",
        "--partitions",
        &k.to_string(),
    ]);
    if k == 1 {
        return vec![dir.to_path_buf()];
    }
    (1..=k).map(|p| dir.join(format!("P{p}"))).collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(
        r.records()
            .map(|rec| rec.unwrap().iter().map(String::from).collect()),
    );
    rows
}

#[test]
fn default_configuration_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "synth",
        "--out",
        s(dir.path()),
        "--n",
        "20",
        "--tau",
        "6",
        "--features",
        "2",
        "--m",
        "2",
        "--signal-features",
        "1",
    ]);
    let cfg = read_json(&dir.path().join("effective_config.json"));
    let m = &cfg["model"];
    assert_eq!(m["head_size"], 256);
    assert_eq!(m["heads"], 4);
    assert_eq!(m["ff_dim"], 4);
    assert_eq!(m["mlp_units"], serde_json::json!([128, 64]));
    assert_eq!(m["global_tokens"], 4);
    assert_eq!(m["dropout"], 0.1);
    assert_eq!(cfg["train"]["learning_rate"], 1e-4);
}

#[test]
fn synth_is_reproducible_and_matches_requested_imbalance() {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        ok(&[
            "synth",
            "--out",
            s(d.path()),
            "--seed",
            "7",
            "--n",
            "1000",
            "--tau",
            "60",
            "--features",
            "24",
            "--imbalance",
            "0.019",
        ]);
    }
    let listing = |d: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            // the echoed config records the output directory itself
            .filter(|(name, _)| name != "effective_config.json")
            .collect();
        v.sort();
        v
    };
    let (a, b) = (listing(dirs[0].path()), listing(dirs[1].path()));
    assert!(a == b, "synthetic directories differ");
    let manifest = fs::read_to_string(dirs[0].path().join("manifest.jsonl")).unwrap();
    let flares = manifest
        .lines()
        .filter(|l| l.contains("\"M\"") || l.contains("\"X\""))
        .count();
    assert_eq!(manifest.lines().count(), 1000);
    assert!(
        (flares as f64 / 1000.0 - 0.0186).abs() < 0.001,
        "{flares} flares"
    );
}

#[test]
fn one_epoch_gives_one_report_row_and_replay_is_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let parts = partitions(&tmp.path().join("data"), 2, 1);
    let first = tmp.path().join("first");
    let mut args = vec![
        "train",
        "--out",
        s(&first),
        "--train",
        s(&parts[0]),
        "--test",
        s(&parts[1]),
        "--epochs",
        "1",
        "--seed",
        "5",
    ];
    args.extend_from_slice(SMALL_MODEL);
    ok(&args);
    let rows = csv_rows(&first.join("report.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(
        rows[0],
        [
            "epoch",
            "train_loss",
            "val_loss",
            "val_tss",
            "val_hss2",
            "val_gs",
            "val_acc"
        ]
    );

    let second = tmp.path().join("second");
    let echoed = first.join("effective_config.json");
    ok(&["train", "--config", s(&echoed), "--out", s(&second)]);
    for f in ["checkpoint.gctaf", "report.csv", "test_metrics.json"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn eval_reports_each_pair_and_the_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let parts = partitions(&tmp.path().join("data"), 3, 2);
    let mut checkpoints = Vec::new();
    for (i, part) in parts.iter().take(2).enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let mut args = vec![
            "train",
            "--out",
            s(&out),
            "--train",
            s(part),
            "--epochs",
            "2",
        ];
        args.extend_from_slice(SMALL_MODEL);
        ok(&args);
        checkpoints.push(out.join("checkpoint.gctaf"));
    }
    let out = tmp.path().join("eval");
    ok(&[
        "eval",
        "--out",
        s(&out),
        "--checkpoint",
        s(&checkpoints[0]),
        "--test",
        s(&parts[1]),
        "--checkpoint",
        s(&checkpoints[1]),
        "--test",
        s(&parts[2]),
    ]);
    let pair = read_json(&out.join("eval_pair1.json"));
    for key in ["accuracy", "hss2", "gs", "tss", "counts"] {
        assert!(pair.get(key).is_some(), "missing {key}");
    }
    let agg = read_json(&out.join("aggregate.json"));
    for metric in ["accuracy", "hss2", "gs", "tss"] {
        assert!(
            agg[metric].get("mean").is_some() && agg[metric].get("std").is_some(),
            "{metric}: {agg}"
        );
    }
}

#[test]
fn empty_test_manifest_is_a_contract_error() {
    let tmp = tempfile::tempdir().unwrap();
    let parts = partitions(&tmp.path().join("data"), 1, 3);
    let run = tmp.path().join("run");
    let mut args = vec![
        "train",
        "--out",
        s(&run),
        "--train",
        s(&parts[0]),
        "--epochs",
        "1",
    ];
    args.extend_from_slice(SMALL_MODEL);
    ok(&args);
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    fs::write(empty.join("manifest.jsonl"), "").unwrap();
    let out = gctaf(&[
        "eval",
        "--out",
        s(&tmp.path().join("e")),
        "--checkpoint",
        s(&run.join("checkpoint.gctaf")),
        "--test",
        s(&empty),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("contract"));
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let parts = partitions(&tmp.path().join("data"), 2, 4);
    let out = tmp.path().join("o");

    let bad_config = tmp.path().join("bad.json");
    fs::write(&bad_config, "{ not json").unwrap();
    assert_eq!(
        gctaf(&["train", "--config", s(&bad_config)]).status.code(),
        Some(2)
    );

    let mut args = vec![
        "train",
        "--out",
        s(&out),
        "--train",
        s(&parts[1]),
        "--test",
        s(&parts[0]),
        "--epochs",
        "1",
    ];
    args.extend_from_slice(SMALL_MODEL);
    assert_eq!(gctaf(&args).status.code(), Some(4));

    assert_eq!(
        gctaf(&[
            "train",
            "--out",
            s(&out),
            "--train",
            s(&parts[0]),
            "--heads",
            "0"
        ])
        .status
        .code(),
        Some(3)
    );

    let mut args = vec![
        "train",
        "--out",
        s(&out),
        "--train",
        s(&parts[0]),
        "--epochs",
        "3",
        "--lr",
        "1e300",
    ];
    args.extend_from_slice(SMALL_MODEL);
    assert_eq!(gctaf(&args).status.code(), Some(5));

    let broken = tmp.path().join("broken");
    fs::create_dir_all(&broken).unwrap();
    let first = fs::read_dir(&parts[0])
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let text = fs::read_to_string(&first).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1] = format!("oops{}", &lines[1][lines[1].find(',').unwrap()..]);
    let text = lines.join("\n") + "\n";
    let name = first.file_name().unwrap();
    fs::write(broken.join(name), text).unwrap();
    let line = fs::read_to_string(parts[0].join("manifest.jsonl")).unwrap();
    let line = line
        .lines()
        .find(|l| l.contains(name.to_str().unwrap()))
        .unwrap()
        .to_string();
    fs::write(broken.join("manifest.jsonl"), line + "\n").unwrap();
    assert_eq!(
        gctaf(&["train", "--out", s(&out), "--train", s(&broken)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn ablation_table_has_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let parts = partitions(&tmp.path().join("data"), 2, 5);
    let out = tmp.path().join("ablate");
    let joined = format!("{},{}", s(&parts[0]), s(&parts[1]));
    let mut args = vec![
        "ablate",
        "--out",
        s(&out),
        "--partitions",
        &joined,
        "--epochs",
        "1",
        "--seeds",
        "1,2",
    ];
    args.extend_from_slice(SMALL_MODEL);
    ok(&args);
    let rows = csv_rows(&out.join("ablation.csv"));
    assert_eq!(rows[0], ["variant", "mean_tss", "std_tss", "n"]);
    let labels: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        labels,
        [
            "GCTAF",
            "no global tokens",
            "no cross-attention",
            "no layer normalization"
        ]
    );
    assert_eq!(csv_rows(&out.join("ablation_runs.csv")).len(), 1 + 4 * 2);
}

#[test]
fn global_token_sweep_has_ten_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let parts = partitions(&tmp.path().join("data"), 1, 6);
    let out = tmp.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--out",
        s(&out),
        "--partitions",
        s(&parts[0]),
        "--epochs",
        "1",
        "--global-token-sweep",
        "10",
    ];
    args.extend_from_slice(SMALL_MODEL);
    ok(&args);
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 11);
    let g: Vec<String> = rows[1..].iter().map(|r| r[4].clone()).collect();
    assert_eq!(g, (1..=10).map(|i| i.to_string()).collect::<Vec<_>>());
    for col in [
        "head_size",
        "heads",
        "ff_dim",
        "mlp_units",
        "global_tokens",
        "dropout",
        "val_tss",
    ] {
        assert!(rows[0].iter().any(|h| h == col), "missing {col}");
    }
}

#[test]
fn baseline_uses_the_eval_schema_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let parts = partitions(&tmp.path().join("data"), 3, 7);
    let joined = parts
        .iter()
        .map(|p| s(p).to_string())
        .collect::<Vec<_>>()
        .join(",");
    let outs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("b{i}"))).collect();
    for o in &outs {
        ok(&["baseline", "--out", s(o), "--partitions", &joined]);
    }
    for f in [
        "baseline_pair1.json",
        "baseline_pair2.json",
        "aggregate.json",
    ] {
        assert_eq!(
            fs::read(outs[0].join(f)).unwrap(),
            fs::read(outs[1].join(f)).unwrap()
        );
    }
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    let run = tmp.path().join("run");
    let mut args = vec![
        "train",
        "--out",
        s(&run),
        "--train",
        s(&parts[0]),
        "--test",
        s(&parts[1]),
        "--epochs",
        "1",
    ];
    args.extend_from_slice(SMALL_MODEL);
    ok(&args);
    assert_eq!(
        keys(&read_json(&outs[0].join("baseline_pair1.json"))),
        keys(&read_json(&run.join("test_metrics.json")))
    );
}
