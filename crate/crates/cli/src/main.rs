use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gctaf::data::Pattern;
use gctaf::model::Ablation;
use gctaf::training::Selection;
use gctaf_cli::commands::{cmd_ablate, cmd_baseline, cmd_eval, cmd_sweep, cmd_synth, cmd_train};
use gctaf_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "gctaf",
    version,
    about = "Global-token cross-attention flare classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation and imputation.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct ModelFlags {
    #[arg(long)]
    head_size: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    global_tokens: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    /// Hidden widths of the head, e.g. `128,64`.
    #[arg(long, value_delimiter = ',')]
    mlp: Option<Vec<usize>>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    #[arg(long)]
    positional_encoding: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = parse_selection)]
    selection: Option<Selection>,
    #[arg(long)]
    undersample: Option<f64>,
    #[arg(long)]
    impute_k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic planted-pattern dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long)]
        features: Option<usize>,
        #[arg(long)]
        imbalance: Option<f64>,
        #[arg(long, value_parser = parse_pattern)]
        pattern: Option<Pattern>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long)]
        missing: Option<f64>,
        #[arg(long)]
        signal_features: Option<usize>,
        #[arg(long)]
        last_step_signal: bool,
        #[arg(long)]
        partitions: Option<usize>,
    },
    /// Preprocess, train and write a checkpoint plus per-epoch report.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Score checkpoints on test sets (one `--test` per `--checkpoint`).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, required = true)]
        test: Vec<PathBuf>,
    },
    /// Train and score every ablation variant over chronological pairs.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long, value_delimiter = ',')]
        partitions: Option<Vec<PathBuf>>,
        /// Seeds shared across variants, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Hyperparameter grid (from the config's `sweep` block) or a token sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long, value_delimiter = ',')]
        partitions: Option<Vec<PathBuf>>,
        /// Sweep the number of global tokens over 1..=G only.
        #[arg(long)]
        global_token_sweep: Option<usize>,
    },
    /// Last-timestamp logistic baseline over chronological pairs.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long, value_delimiter = ',')]
        partitions: Option<Vec<PathBuf>>,
    },
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    parse_enum(s)
}

fn parse_selection(s: &str) -> Result<Selection, String> {
    parse_enum(s)
}

fn parse_pattern(s: &str) -> Result<Pattern, String> {
    parse_enum(s)
}

fn base_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    Ok(cfg)
}

fn apply_model_flags(cfg: &mut RunConfig, f: &ModelFlags, seed: Option<u64>) {
    let m = &mut cfg.model;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(m.head_size, f.head_size);
    set!(m.heads, f.heads);
    set!(m.num_blocks, f.blocks);
    set!(m.global_tokens, f.global_tokens);
    set!(m.ff_dim, f.ff_dim);
    set!(m.mlp_units, f.mlp);
    set!(m.dropout, f.dropout);
    set!(m.ablation, f.ablation);
    set!(m.positional_encoding, f.positional_encoding);
    let t = &mut cfg.train;
    set!(t.epochs, f.epochs);
    set!(t.learning_rate, f.lr);
    set!(t.batch_size, f.batch_size);
    set!(t.selection, f.selection);
    set!(t.seed, seed);
    if f.undersample.is_some() {
        t.undersample_ratio = f.undersample;
    }
    set!(cfg.data.impute_k, f.impute_k);
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Synth { common, .. }
        | Command::Train { common, .. }
        | Command::Eval { common, .. }
        | Command::Ablate { common, .. }
        | Command::Sweep { common, .. }
        | Command::Baseline { common, .. } => common.clone(),
    };
    let mut cfg = base_config(&common)?;
    if let Some(n) = cfg.threads {
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Synth {
            n,
            tau,
            features,
            imbalance,
            pattern,
            m,
            noise,
            amplitude,
            missing,
            signal_features,
            last_step_signal,
            partitions,
            ..
        } => {
            let s = &mut cfg.synth.spec;
            if let Some(v) = n {
                s.n_instances = v;
            }
            if let Some(v) = tau {
                s.tau = v;
            }
            if let Some(v) = features {
                s.n_features = v;
            }
            if let Some(v) = imbalance {
                s.imbalance = v;
            }
            if let Some(v) = pattern {
                s.pattern = v;
            }
            if let Some(v) = m {
                s.m = v;
            }
            if let Some(v) = noise {
                s.noise = v;
            }
            if let Some(v) = amplitude {
                s.amplitude = v;
            }
            if let Some(v) = missing {
                s.missing_fraction = v;
            }
            if let Some(v) = signal_features {
                s.signal_features = v;
            }
            if last_step_signal {
                s.last_step_signal = true;
            }
            if let Some(v) = common.seed {
                cfg.synth.seed = v;
                s.world_seed = v;
            }
            if let Some(v) = partitions {
                cfg.synth.partitions = v;
            }
            for p in cmd_synth(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Train {
            model, train, test, ..
        } => {
            apply_model_flags(&mut cfg, &model, common.seed);
            if train.is_some() {
                cfg.data.train = train;
            }
            if test.is_some() {
                cfg.data.test = test;
            }
            let summary = cmd_train(&cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("serializes")
            );
        }
        Command::Eval {
            checkpoint, test, ..
        } => {
            let out = cmd_eval(&checkpoint, &test, &cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&out).expect("serializes")
            );
        }
        Command::Ablate {
            model,
            partitions,
            seeds,
            ..
        } => {
            apply_model_flags(&mut cfg, &model, common.seed);
            if let Some(p) = partitions {
                cfg.data.partitions = p;
            }
            if let Some(s) = seeds {
                cfg.ablate.seeds = s;
            }
            let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
            for s in cmd_ablate(&cfg)? {
                println!(
                    "{}: mean TSS {} ± {}",
                    s.label,
                    fmt(s.tss.mean),
                    fmt(s.tss.std)
                );
            }
        }
        Command::Sweep {
            model,
            partitions,
            global_token_sweep,
            ..
        } => {
            apply_model_flags(&mut cfg, &model, common.seed);
            if let Some(p) = partitions {
                cfg.data.partitions = p;
            }
            if let Some(g) = global_token_sweep {
                cfg.sweep = gctaf_cli::config::SweepGrid {
                    global_tokens: (1..=g).collect(),
                    ..Default::default()
                };
            }
            let rows = cmd_sweep(&cfg)?;
            println!(
                "{} configurations written to {}",
                rows.len(),
                cfg.out.display()
            );
        }
        Command::Baseline {
            model, partitions, ..
        } => {
            apply_model_flags(&mut cfg, &model, common.seed);
            if let Some(p) = partitions {
                cfg.data.partitions = p;
            }
            let out = cmd_baseline(&cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&out).expect("serializes")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GCTAF_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
