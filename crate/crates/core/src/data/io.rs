//! On-disk dataset layout:
//!
//! ```text
//! <dir>/dataset.json     DatasetMeta (optional; inferred from the first instance if absent)
//! <dir>/manifest.jsonl   one InstanceRecord per line, sorted by (start_time, source_id)
//! <dir>/<file>.csv       header = feature names, τ data rows, empty cell = missing
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, DatasetMeta, FlareClass, MvtsInstance, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_META_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub file: String,
    pub label: FlareClass,
    pub start_time: DateTime<Utc>,
    pub source_id: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads every instance listed in a JSON-lines manifest. Files are resolved
/// relative to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let meta_path = dir.join(DATASET_META_FILE);
    let mut meta: Option<DatasetMeta> = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        Some(serde_json::from_str(&text).map_err(|e| DataError::Parse {
            file: meta_path.clone(),
            line: e.line() as u64,
            column: e.column(),
            msg: e.to_string(),
        })?)
    } else {
        None
    };

    let manifest = fs::File::open(manifest_path).map_err(io_err(manifest_path))?;
    let mut instances = Vec::new();
    for (i, line) in BufReader::new(manifest).lines().enumerate() {
        let line = line.map_err(io_err(manifest_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            file: manifest_path.to_path_buf(),
            line: i as u64 + 1,
            column: e.column(),
            msg: e.to_string(),
        })?;
        let path = dir.join(&rec.file);
        let (names, values, rows) = read_instance_csv(&path)?;
        let m = meta.get_or_insert_with(|| DatasetMeta {
            tau: rows,
            n_features: names.len(),
            feature_names: names.clone(),
            ..DatasetMeta::default()
        });
        if names.len() != m.n_features {
            return Err(DataError::Validation {
                file: path,
                msg: format!(
                    "{} feature columns, dataset has {}",
                    names.len(),
                    m.n_features
                ),
            });
        }
        if rows != m.tau {
            return Err(DataError::Validation {
                file: path,
                msg: format!("{rows} rows, expected tau = {}", m.tau),
            });
        }
        instances.push(MvtsInstance {
            tau: rows,
            n_features: names.len(),
            values,
            label: rec.label,
            start_time: rec.start_time,
            source_id: rec.source_id,
            file: Some(rec.file),
        });
    }
    Ok(Dataset::new(meta.unwrap_or_default(), instances))
}

type CsvInstance = (Vec<String>, Vec<Option<f64>>, usize);

fn read_instance_csv(path: &Path) -> Result<CsvInstance> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            let v = if field.is_empty() {
                None
            } else {
                let x: f64 = field.parse().map_err(|_| DataError::Parse {
                    file: path.to_path_buf(),
                    line,
                    column: col + 1,
                    msg: format!("not a number: {field:?}"),
                })?;
                if x.is_nan() {
                    None
                } else if x.is_infinite() {
                    return Err(DataError::Parse {
                        file: path.to_path_buf(),
                        line,
                        column: col + 1,
                        msg: "infinite value".into(),
                    });
                } else {
                    Some(x)
                }
            };
            values.push(v);
        }
        rows += 1;
    }
    Ok((names, values, rows))
}

fn csv_error(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => DataError::Parse {
            file: path.to_path_buf(),
            line,
            column: 0,
            msg: format!("{kind:?}"),
        },
    }
}

/// Writes a dataset in canonical order; returns the manifest path.
/// Instances without a file name get `inst_<index>.csv`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut ds = dataset.clone();
    ds.sort_canonical();
    let meta_path = dir.join(DATASET_META_FILE);
    let meta = serde_json::to_string_pretty(&ds.meta).expect("meta serializes");
    fs::write(&meta_path, meta + "\n").map_err(io_err(&meta_path))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = Vec::new();
    let names = if ds.meta.feature_names.len() == ds.meta.n_features {
        ds.meta.feature_names.clone()
    } else {
        super::default_feature_names(ds.meta.n_features)
    };
    for (i, inst) in ds.instances.iter().enumerate() {
        let file = inst
            .file
            .clone()
            .unwrap_or_else(|| format!("inst_{i:06}.csv"));
        let path = dir.join(&file);
        let mut text = names.join(",");
        text.push('\n');
        for row in inst.values.chunks(inst.n_features) {
            let cells: Vec<String> = row
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        fs::write(&path, text).map_err(io_err(&path))?;
        let rec = InstanceRecord {
            file,
            label: inst.label,
            start_time: inst.start_time,
            source_id: inst.source_id.clone(),
        };
        serde_json::to_writer(&mut manifest, &rec).expect("record serializes");
        manifest.push(b'\n');
    }
    let mut f = fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    f.write_all(&manifest).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    fn manifest_line(file: &str) -> String {
        format!(
            r#"{{"file":"{file}","label":"M","start_time":"2012-01-01T00:00:00Z","source_id":"AR1"}}"#
        )
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), MANIFEST_FILE, "");
        let ds = load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn short_instance_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let meta = DatasetMeta::new(3, 2);
        write(
            dir.path(),
            DATASET_META_FILE,
            &serde_json::to_string(&meta).unwrap(),
        );
        write(dir.path(), "a.csv", "x,y\n1,2\n3,4\n");
        write(dir.path(), MANIFEST_FILE, &manifest_line("a.csv"));
        let err = load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap_err();
        match err {
            DataError::Validation { file, msg } => {
                assert!(file.ends_with("a.csv"));
                assert!(msg.contains("2 rows"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_cell_reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x,y\n1,2\n3,oops\n");
        write(dir.path(), MANIFEST_FILE, &manifest_line("a.csv"));
        match load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap_err() {
            DataError::Parse { line, column, .. } => assert_eq!((line, column), (3, 2)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_cells_survive_loading() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x,y\n1,\nNaN,4\n");
        write(dir.path(), MANIFEST_FILE, &manifest_line("a.csv"));
        let ds = load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(ds.meta.tau, 2);
        assert_eq!(
            ds.instances[0].values,
            vec![Some(1.0), None, None, Some(4.0)]
        );
    }
}
