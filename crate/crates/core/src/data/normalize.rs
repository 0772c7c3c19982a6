use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Result};

/// Lower bound on a fitted standard deviation; a constant feature maps to 0.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature affine map `z = (x − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn forward(&self, f: usize, x: f64) -> f64 {
        (x - self.mean[f]) / self.std[f]
    }

    pub fn inverse(&self, f: usize, z: f64) -> f64 {
        z * self.std[f] + self.mean[f]
    }
}

/// Fits mean and population standard deviation per feature over every
/// observed cell of every training instance.
pub fn zscore_fit(train: &Dataset) -> Result<ZScore> {
    let n = train.meta.n_features;
    let mut count = vec![0usize; n];
    let mut sum = vec![0.0; n];
    for inst in &train.instances {
        for (i, v) in inst.values.iter().enumerate() {
            if let Some(x) = v {
                count[i % n] += 1;
                sum[i % n] += x;
            }
        }
    }
    let mean: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mut sq = vec![0.0; n];
    for inst in &train.instances {
        for (i, v) in inst.values.iter().enumerate() {
            if let Some(x) = v {
                sq[i % n] += (x - mean[i % n]).powi(2);
            }
        }
    }
    if let Some(f) = count.iter().position(|&c| c == 0) {
        if !train.is_empty() {
            return Err(DataError::Validation {
                file: "<training set>".into(),
                msg: format!("feature {f} has no observed values"),
            });
        }
    }
    let std = sq
        .iter()
        .zip(&count)
        .map(|(s, &c)| {
            if c > 0 {
                (s / c as f64).sqrt().max(STD_FLOOR)
            } else {
                1.0
            }
        })
        .collect();
    Ok(ZScore { mean, std })
}

/// Applies fitted statistics; missing cells stay missing.
pub fn zscore_apply(dataset: &Dataset, stats: &ZScore) -> Result<Dataset> {
    let n = dataset.meta.n_features;
    if stats.n_features() != n || stats.std.len() != n {
        return Err(DataError::Validation {
            file: "<normalization statistics>".into(),
            msg: format!(
                "statistics cover {} features, dataset has {n}",
                stats.n_features()
            ),
        });
    }
    let mut out = dataset.clone();
    for inst in &mut out.instances {
        for (i, v) in inst.values.iter_mut().enumerate() {
            if let Some(x) = v {
                *x = stats.forward(i % n, *x);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::tests::instance;
    use super::super::{DatasetMeta, FlareClass};
    use super::*;

    fn ds(rows: Vec<Vec<f64>>) -> Dataset {
        let insts = rows
            .into_iter()
            .enumerate()
            .map(|(h, r)| {
                instance(
                    FlareClass::FQ,
                    h as u32,
                    r.into_iter().map(Some).collect(),
                    2,
                )
            })
            .collect();
        Dataset::new(DatasetMeta::new(2, 2), insts)
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let d = ds(vec![vec![5.0, 1.0, 5.0, 2.0], vec![5.0, 3.0, 5.0, 4.0]]);
        let z = zscore_fit(&d).unwrap();
        assert_eq!(z.std[0], STD_FLOOR);
        let out = zscore_apply(&d, &z).unwrap();
        for inst in &out.instances {
            assert_eq!(inst.get(0, 0), Some(0.0));
            assert_eq!(inst.get(1, 0), Some(0.0));
        }
    }

    #[test]
    fn fitted_training_set_is_centered() {
        let d = ds(vec![vec![1.0, 10.0, 2.0, 20.0], vec![4.0, -3.0, 8.0, 7.5]]);
        let z = zscore_fit(&d).unwrap();
        let out = zscore_apply(&d, &z).unwrap();
        for f in 0..2 {
            let vals: Vec<f64> = out
                .instances
                .iter()
                .flat_map(|i| [i.get(0, f).unwrap(), i.get(1, f).unwrap()])
                .collect();
            let m = vals.iter().sum::<f64>() / 4.0;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_is_preserved_in_z_units() {
        let train = ds(vec![vec![1.0, 0.0, 3.0, 2.0], vec![5.0, 4.0, 7.0, 6.0]]);
        let z = zscore_fit(&train).unwrap();
        let mut test = train.clone();
        for inst in &mut test.instances {
            for v in inst.values.iter_mut() {
                *v = v.map(|x| x + 3.0);
            }
        }
        let a = zscore_apply(&train, &z).unwrap();
        let b = zscore_apply(&test, &z).unwrap();
        for (ia, ib) in a.instances.iter().zip(&b.instances) {
            for (k, (x, y)) in ia.values.iter().zip(&ib.values).enumerate() {
                let shift = 3.0 / z.std[k % 2];
                assert!((y.unwrap() - x.unwrap() - shift).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_recovers_input_and_missing_stays_missing() {
        let mut d = ds(vec![vec![1.0, 2.0, 3.0, 5.0]]);
        d.instances[0].values[1] = None;
        let z = zscore_fit(&d).unwrap();
        let out = zscore_apply(&d, &z).unwrap();
        assert_eq!(out.instances[0].values[1], None);
        let back = z.inverse(0, out.instances[0].get(1, 0).unwrap());
        assert!((back - 3.0).abs() < 1e-12);
    }
}
