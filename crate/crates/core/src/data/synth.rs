//! Planted-pattern generator standing in for real flare data.
//!
//! Every feature `f` has a dataset-level level `μ_f` and scale `σ_f`. A cell
//! is `μ_f + σ_f · (noise · e_t + bump)`, where `e` is a stationary unit-variance
//! AR(1) process per feature. Flare instances (M, X) get a bump of
//! `amplitude · sign_f` on every signal feature at `m` time indices; the
//! signal features and their signs depend only on `world_seed`, so separately
//! generated partitions share them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::{write_dataset, DataError, Dataset, DatasetMeta, FlareClass, MvtsInstance, Result};
use crate::rng::Rng;

pub const SIGNAL_FILE: &str = "signal.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Pairwise non-adjacent time indices.
    #[default]
    Dispersed,
    /// One run of `m` consecutive indices.
    Contiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_instances: usize,
    pub tau: usize,
    pub n_features: usize,
    /// Fraction of flare (M/X) instances; the count is `round(imbalance · n)`.
    pub imbalance: f64,
    pub pattern: Pattern,
    /// Signal time indices per flare instance.
    pub m: usize,
    /// Standard deviation of the AR(1) noise in units of each feature's scale.
    pub noise: f64,
    /// AR(1) coefficient.
    pub ar: f64,
    /// Bump height in units of each feature's scale.
    pub amplitude: f64,
    pub signal_features: usize,
    pub missing_fraction: f64,
    /// Force the final timestamp to be one of the signal indices.
    pub last_step_signal: bool,
    pub start_time: DateTime<Utc>,
    pub cadence_hours: i64,
    pub partition_id: Option<String>,
    /// Seeds the dataset-level structure (levels, scales, signal features and
    /// their signs). Partitions of one corpus share it and differ only in the
    /// instance stream.
    pub world_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_instances: 1000,
            tau: 60,
            n_features: 24,
            imbalance: 0.1,
            pattern: Pattern::Dispersed,
            m: 6,
            noise: 1.0,
            ar: 0.7,
            amplitude: 2.0,
            signal_features: 6,
            missing_fraction: 0.0,
            last_step_signal: false,
            start_time: Utc.with_ymd_and_hms(2010, 1, 1, 0, 0, 0).unwrap(),
            cadence_hours: 1,
            partition_id: None,
            world_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DataError::Config(m));
        if self.tau == 0 || self.n_features == 0 {
            return fail("tau and n_features must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.imbalance) {
            return fail(format!("imbalance {} outside [0, 1]", self.imbalance));
        }
        if self.m == 0 || self.m > self.tau {
            return fail(format!(
                "m = {} signal indices do not fit in tau = {}",
                self.m, self.tau
            ));
        }
        if self.pattern == Pattern::Dispersed {
            let room = if self.last_step_signal {
                self.tau.saturating_sub(2)
            } else {
                self.tau
            };
            let need = if self.last_step_signal {
                self.m - 1
            } else {
                self.m
            };
            if need > 0 && 2 * need > room + 1 {
                return fail(format!(
                    "{} non-adjacent indices do not fit in tau = {}",
                    self.m, self.tau
                ));
            }
        }
        if self.signal_features == 0 || self.signal_features > self.n_features {
            return fail(format!(
                "signal_features = {} must lie in 1..={}",
                self.signal_features, self.n_features
            ));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return fail(format!(
                "missing_fraction {} outside [0, 1)",
                self.missing_fraction
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.amplitude.is_finite()) {
            return fail("noise and amplitude must be finite, noise non-negative".into());
        }
        if self.ar.is_nan() || self.ar.abs() >= 1.0 {
            return fail(format!("AR coefficient {} must satisfy |ar| < 1", self.ar));
        }
        if self.cadence_hours <= 0 {
            return fail("cadence_hours must be positive".into());
        }
        Ok(())
    }
}

/// Ground truth for one generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub file: String,
    pub label: FlareClass,
    /// Signal time indices (empty for non-flare instances).
    pub indices: Vec<usize>,
    pub features: Vec<usize>,
}

/// Splits `total` into per-class counts proportional to `shares`, largest
/// remainder first, so the counts always sum to `total`.
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| total as f64 * s / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = total - counts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// `k` pairwise non-adjacent indices from `0..len`, sorted.
fn dispersed(len: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    rng.sample_indices(len + 1 - k, k)
        .into_iter()
        .enumerate()
        .map(|(i, p)| p + i)
        .collect()
}

fn signal_indices(spec: &SynthSpec, rng: &mut Rng) -> Vec<usize> {
    let (tau, m) = (spec.tau, spec.m);
    match (spec.pattern, spec.last_step_signal) {
        (Pattern::Contiguous, false) => {
            let s = rng.below(tau - m + 1);
            (s..s + m).collect()
        }
        (Pattern::Contiguous, true) => (tau - m..tau).collect(),
        (Pattern::Dispersed, false) => dispersed(tau, m, rng),
        (Pattern::Dispersed, true) => {
            let mut v = dispersed(tau.saturating_sub(2), m - 1, rng);
            v.push(tau - 1);
            v
        }
    }
}

/// Generates a dataset and its per-instance ground truth. Class counts are
/// exact: `round(imbalance · n)` flares split between M and X, and the rest
/// split among FQ, B and C, all in proportion to the SWAN-SF class shares.
pub fn generate_synthetic(spec: &SynthSpec, rng: &Rng) -> Result<(Dataset, Vec<SignalRecord>)> {
    spec.validate()?;
    let n = spec.n_instances;
    let n_flare = (spec.imbalance * n as f64).round() as usize;
    let flare_counts = apportion(n_flare, &[1.7, 0.16]);
    let quiet_counts = apportion(n - n_flare, &[82.8, 5.5, 9.8]);
    let mut labels = Vec::with_capacity(n);
    for (class, count) in [FlareClass::FQ, FlareClass::B, FlareClass::C]
        .into_iter()
        .zip(quiet_counts)
        .chain([FlareClass::M, FlareClass::X].into_iter().zip(flare_counts))
    {
        labels.extend(std::iter::repeat_n(class, count));
    }
    rng.split(1).shuffle(&mut labels);

    let nf = spec.n_features;
    let mut feat_rng = Rng::new(spec.world_seed).split(2);
    let level: Vec<f64> = (0..nf).map(|_| feat_rng.uniform_range(-5.0, 5.0)).collect();
    let scale: Vec<f64> = (0..nf)
        .map(|_| feat_rng.uniform_range(0.5, 3.0).exp())
        .collect();
    let features = feat_rng.sample_indices(nf, spec.signal_features);
    let signs: Vec<f64> = features
        .iter()
        .map(|_| if feat_rng.uniform() < 0.5 { -1.0 } else { 1.0 })
        .collect();

    let innovation = (1.0 - spec.ar * spec.ar).sqrt();
    let mut instances = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let mut r = rng.split(1000 + i as u64);
        let mut z = vec![0.0; spec.tau * nf];
        for f in 0..nf {
            let mut e = r.normal();
            for t in 0..spec.tau {
                if t > 0 {
                    e = spec.ar * e + innovation * r.normal();
                }
                z[t * nf + f] = spec.noise * e;
            }
        }
        let indices = if label.is_flare() {
            signal_indices(spec, &mut r)
        } else {
            Vec::new()
        };
        for &t in &indices {
            for (&f, &s) in features.iter().zip(&signs) {
                z[t * nf + f] += spec.amplitude * s;
            }
        }
        let mut values: Vec<Option<f64>> = z
            .iter()
            .enumerate()
            .map(|(k, v)| Some(level[k % nf] + scale[k % nf] * v))
            .collect();
        if spec.missing_fraction > 0.0 {
            for v in values.iter_mut() {
                if r.uniform() < spec.missing_fraction {
                    *v = None;
                }
            }
            if values.iter().all(Option::is_none) {
                values[0] = Some(level[0] + scale[0] * z[0]);
            }
        }
        let file = format!("inst_{i:06}.csv");
        instances.push(MvtsInstance {
            tau: spec.tau,
            n_features: nf,
            values,
            label,
            start_time: spec.start_time + Duration::hours(spec.cadence_hours * i as i64),
            source_id: format!("SYN{i:06}"),
            file: Some(file.clone()),
        });
        records.push(SignalRecord {
            file,
            label,
            indices,
            features: features.clone(),
        });
    }
    let mut meta = DatasetMeta::new(spec.tau, nf);
    meta.partition_id = spec.partition_id.clone();
    Ok((Dataset::new(meta, instances), records))
}

/// Writes the dataset plus the `signal.jsonl` ground-truth sidecar; returns
/// the manifest path.
pub fn write_synthetic(dir: &Path, dataset: &Dataset, signals: &[SignalRecord]) -> Result<PathBuf> {
    let manifest = write_dataset(dir, dataset)?;
    let path = dir.join(SIGNAL_FILE);
    let mut out = Vec::new();
    for rec in signals {
        serde_json::to_writer(&mut out, rec).expect("record serializes");
        out.push(b'\n');
    }
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|source| DataError::Io { path, source })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_instances: 200,
            tau: 12,
            n_features: 5,
            m: 3,
            signal_features: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn flare_count_is_exact() {
        let spec = SynthSpec {
            n_instances: 1000,
            tau: 4,
            n_features: 2,
            m: 2,
            signal_features: 1,
            ..SynthSpec::default()
        };
        let (ds, _) = generate_synthetic(&spec, &Rng::new(3)).unwrap();
        let c = ds.class_counts();
        assert_eq!(c[3] + c[4], 100);
        assert_eq!(c.iter().sum::<usize>(), 1000);
        assert_eq!(apportion(100, &[1.7, 0.16]), vec![91, 9]);
    }

    #[test]
    fn dispersed_indices_are_non_adjacent() {
        let (_, sig) = generate_synthetic(&small(), &Rng::new(5)).unwrap();
        let flares: Vec<_> = sig.iter().filter(|s| s.label.is_flare()).collect();
        assert!(!flares.is_empty());
        for s in flares {
            assert_eq!(s.indices.len(), 3);
            assert!(
                s.indices.windows(2).all(|w| w[1] >= w[0] + 2),
                "{:?}",
                s.indices
            );
            assert!(*s.indices.last().unwrap() < 12);
        }
    }

    #[test]
    fn contiguous_and_last_step_modes() {
        let spec = SynthSpec {
            pattern: Pattern::Contiguous,
            last_step_signal: true,
            ..small()
        };
        let (_, sig) = generate_synthetic(&spec, &Rng::new(5)).unwrap();
        for s in sig.iter().filter(|s| s.label.is_flare()) {
            assert_eq!(s.indices, vec![9, 10, 11]);
        }
        let spec = SynthSpec {
            last_step_signal: true,
            ..small()
        };
        let (_, sig) = generate_synthetic(&spec, &Rng::new(5)).unwrap();
        for s in sig.iter().filter(|s| s.label.is_flare()) {
            assert_eq!(*s.indices.last().unwrap(), 11);
            assert!(s.indices.windows(2).all(|w| w[1] >= w[0] + 2));
        }
    }

    #[test]
    fn infeasible_spec_is_config_error() {
        let spec = SynthSpec { m: 13, ..small() };
        assert!(matches!(
            generate_synthetic(&spec, &Rng::new(0)),
            Err(DataError::Config(_))
        ));
        let spec = SynthSpec { m: 7, ..small() };
        assert!(matches!(
            generate_synthetic(&spec, &Rng::new(0)),
            Err(DataError::Config(_))
        ));
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&small(), &Rng::new(9)).unwrap();
        let b = generate_synthetic(&small(), &Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(), &Rng::new(10)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn missing_fraction_is_respected() {
        let spec = SynthSpec {
            missing_fraction: 0.05,
            ..small()
        };
        let (ds, _) = generate_synthetic(&spec, &Rng::new(2)).unwrap();
        let missing: usize = ds.instances.iter().map(|i| i.missing_count()).sum();
        let frac = missing as f64 / (200 * 12 * 5) as f64;
        assert!((frac - 0.05).abs() < 0.01, "{frac}");
    }
}
