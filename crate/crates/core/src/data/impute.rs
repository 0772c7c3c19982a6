//! Correlation-guided k-nearest-column imputation.
//!
//! Within one instance, a gappy column `c` is matched against every other
//! column `j` by Pearson correlation over the timestamps where both are
//! observed (set `J`). The `k` columns with the largest `|r|` (ties to the
//! lower index; `r` undefined or zero is skipped) become neighbours. A missing
//! cell at time `t` is estimated from each neighbour observed at `t` as
//!
//! ```text
//! m_c + s_c · sign(r) · (x_j(t) − m_j) / s_j
//! ```
//!
//! with means and population deviations taken over `J`, and the estimates are
//! averaged with weights `|r|`. Cells no neighbour can reach fall back to
//! linear interpolation between the nearest observed cells of the column,
//! then the column's observed mean, then the dataset mean of the feature.
//! Only originally observed values feed any estimate.

use rayon::prelude::*;

use super::{DataError, Dataset, MvtsInstance, Result};

pub fn impute_fpcknn(dataset: &Dataset, k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(DataError::Config("imputation needs k >= 1".into()));
    }
    let n = dataset.meta.n_features;
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for inst in &dataset.instances {
        for (i, v) in inst.values.iter().enumerate() {
            if let Some(x) = v {
                sum[i % inst.n_features] += x;
                count[i % inst.n_features] += 1;
            }
        }
    }
    let feature_mean: Vec<Option<f64>> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();

    let results: Vec<std::result::Result<MvtsInstance, String>> = dataset
        .instances
        .par_iter()
        .map(|inst| impute_instance(inst, k, &feature_mean))
        .collect();
    let mut failed = Vec::new();
    let mut instances = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(i) => instances.push(i),
            Err(name) => failed.push(name),
        }
    }
    if !failed.is_empty() {
        return Err(DataError::Imputation(failed));
    }
    Ok(Dataset {
        meta: dataset.meta.clone(),
        instances,
        split: dataset.split,
    })
}

struct Joint {
    r: f64,
    mean_c: f64,
    std_c: f64,
    mean_j: f64,
    std_j: f64,
}

fn joint_stats(inst: &MvtsInstance, c: usize, j: usize) -> Option<Joint> {
    let pairs: Vec<(f64, f64)> = (0..inst.tau)
        .filter_map(|t| Some((inst.get(t, c)?, inst.get(t, j)?)))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let len = pairs.len() as f64;
    let mean_c = pairs.iter().map(|p| p.0).sum::<f64>() / len;
    let mean_j = pairs.iter().map(|p| p.1).sum::<f64>() / len;
    let (mut scc, mut sjj, mut scj) = (0.0, 0.0, 0.0);
    for &(a, b) in &pairs {
        scc += (a - mean_c) * (a - mean_c);
        sjj += (b - mean_j) * (b - mean_j);
        scj += (a - mean_c) * (b - mean_j);
    }
    if scc == 0.0 || sjj == 0.0 {
        return None;
    }
    let r = scj / (scc * sjj).sqrt();
    (r != 0.0 && r.is_finite()).then(|| Joint {
        r,
        mean_c,
        std_c: (scc / len).sqrt(),
        mean_j,
        std_j: (sjj / len).sqrt(),
    })
}

fn impute_instance(
    inst: &MvtsInstance,
    k: usize,
    feature_mean: &[Option<f64>],
) -> std::result::Result<MvtsInstance, String> {
    if inst.values.iter().all(Option::is_none) {
        return Err(inst.describe());
    }
    let mut out = inst.clone();
    for (c, fallback) in feature_mean.iter().enumerate().take(inst.n_features) {
        let missing: Vec<usize> = (0..inst.tau)
            .filter(|&t| inst.get(t, c).is_none())
            .collect();
        if missing.is_empty() {
            continue;
        }
        let observed: Vec<usize> = (0..inst.tau)
            .filter(|&t| inst.get(t, c).is_some())
            .collect();
        let mut neighbours: Vec<(usize, Joint)> = (0..inst.n_features)
            .filter(|&j| j != c)
            .filter_map(|j| joint_stats(inst, c, j).map(|s| (j, s)))
            .collect();
        // stable sort keeps lower indices first among equal |r|
        neighbours.sort_by(|a, b| b.1.r.abs().total_cmp(&a.1.r.abs()));
        neighbours.truncate(k);

        for t in missing {
            let mut num = 0.0;
            let mut den = 0.0;
            for (j, s) in &neighbours {
                if let Some(x) = inst.get(t, *j) {
                    let w = s.r.abs();
                    num += w * (s.mean_c + s.std_c * s.r.signum() * (x - s.mean_j) / s.std_j);
                    den += w;
                }
            }
            let value = if den > 0.0 {
                num / den
            } else if let Some(v) = interpolate(inst, c, t, &observed) {
                v
            } else if !observed.is_empty() {
                observed
                    .iter()
                    .map(|&u| inst.get(u, c).unwrap())
                    .sum::<f64>()
                    / observed.len() as f64
            } else {
                fallback
                    .ok_or_else(|| format!("{} (feature {c} never observed)", inst.describe()))?
            };
            out.values[t * inst.n_features + c] = Some(value);
        }
    }
    Ok(out)
}

/// Linear interpolation strictly between two observed cells of column `c`.
fn interpolate(inst: &MvtsInstance, c: usize, t: usize, observed: &[usize]) -> Option<f64> {
    let after = observed.partition_point(|&u| u < t);
    let lo = *observed.get(after.checked_sub(1)?)?;
    let hi = *observed.get(after)?;
    let (a, b) = (inst.get(lo, c)?, inst.get(hi, c)?);
    let w = (t - lo) as f64 / (hi - lo) as f64;
    Some(a + w * (b - a))
}
