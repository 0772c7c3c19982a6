//! Run configuration: one JSON document covering every subcommand. Flags on
//! the command line override fields after the file is read, and the result is
//! echoed to `<out>/effective_config.json` so the run can be replayed.

use std::fs;
use std::path::{Path, PathBuf};

use gctaf::data::SynthSpec;
use gctaf::model::{Ablation, ModelConfig};
use gctaf::training::{TrainConfig, VltConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub vlt: VltConfig,
    pub ablate: AblateConfig,
    pub sweep: SweepGrid,
    pub out: PathBuf,
    /// Worker threads for evaluation; `None` lets rayon decide.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            vlt: VltConfig::default(),
            ablate: AblateConfig::default(),
            sweep: SweepGrid::default(),
            out: PathBuf::from("out"),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training partition for `train` (directory or manifest path).
    pub train: Option<PathBuf>,
    /// Optional held-out partition for `train`.
    pub test: Option<PathBuf>,
    /// Chronologically ordered partitions for `ablate`, `sweep` and `baseline`.
    pub partitions: Vec<PathBuf>,
    /// Neighbour columns used by the imputer.
    pub impute_k: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            partitions: Vec::new(),
            impute_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub spec: SynthSpec,
    /// Number of consecutive partitions to write (`P1`, `P2`, ...). With 1
    /// the dataset is written directly into the output directory.
    pub partitions: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            partitions: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub variants: Vec<Ablation>,
    /// Training seeds shared by every variant; empty means `train.seed` only.
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: Ablation::ALL.to_vec(),
            seeds: Vec::new(),
        }
    }
}

/// Hyperparameter grid. An empty axis keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub head_size: Vec<usize>,
    pub heads: Vec<usize>,
    pub ff_dim: Vec<usize>,
    pub mlp_units: Vec<Vec<usize>>,
    pub global_tokens: Vec<usize>,
    pub dropout: Vec<f64>,
    pub num_blocks: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

/// One grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub model: ModelConfig,
    pub learning_rate: f64,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepGrid {
    /// Cartesian product in a fixed nesting order (head size outermost,
    /// learning rate innermost). Every point is validated.
    pub fn points(&self, base: &ModelConfig, base_lr: f64) -> Result<Vec<GridPoint>> {
        let mut out = Vec::new();
        for hs in axis(&self.head_size, base.head_size) {
            for h in axis(&self.heads, base.heads) {
                for ff in axis(&self.ff_dim, base.ff_dim) {
                    for mlp in axis(&self.mlp_units, base.mlp_units.clone()) {
                        for g in axis(&self.global_tokens, base.global_tokens) {
                            for d in axis(&self.dropout, base.dropout) {
                                for l in axis(&self.num_blocks, base.num_blocks) {
                                    for lr in axis(&self.learning_rate, base_lr) {
                                        let model = ModelConfig {
                                            head_size: hs,
                                            heads: h,
                                            ff_dim: ff,
                                            mlp_units: mlp.clone(),
                                            global_tokens: g,
                                            dropout: d,
                                            num_blocks: l,
                                            ..base.clone()
                                        };
                                        model.validate().map_err(|e| {
                                            CliError::Config(format!("grid point: {e}"))
                                        })?;
                                        if !(lr > 0.0 && lr.is_finite()) {
                                            return Err(CliError::Config(format!(
                                                "grid learning rate {lr} is not positive"
                                            )));
                                        }
                                        out.push(GridPoint {
                                            model,
                                            learning_rate: lr,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::ConfigParse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    /// Writes the effective configuration into the output directory.
    pub fn echo(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).map_err(CliError::io(&self.out))?;
        let path = self.out.join(EFFECTIVE_CONFIG_FILE);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(&path, text + "\n").map_err(CliError::io(&path))?;
        Ok(path)
    }
}
