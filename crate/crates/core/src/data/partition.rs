use super::{DataError, Dataset, FlareClass, Result, SplitTag};
use crate::rng::Rng;

/// Fraction of each training partition held out for model selection.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// One train/test pair from consecutive partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPair {
    /// Label such as "P1-P2".
    pub name: String,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Keeps M/X and FQ; drops B and C. Only legal on a training split.
pub fn filter_training_nf_to_fq(dataset: &Dataset) -> Result<Dataset> {
    if dataset.split != SplitTag::Train {
        return Err(DataError::Contract(format!(
            "non-flare filtering applies to training data only, got a {:?} split",
            dataset.split
        )));
    }
    let mut out = dataset.clone();
    out.instances
        .retain(|i| i.label.is_flare() || i.label == FlareClass::FQ);
    Ok(out)
}

/// Splits off the latest `VALIDATION_FRACTION` of instances by start time.
/// Training instances sharing the boundary timestamp move to validation so
/// that every validation instance is strictly later than all training ones.
pub fn validation_split(dataset: &Dataset) -> (Dataset, Dataset) {
    let mut sorted = dataset.clone();
    sorted.sort_canonical();
    let n = sorted.len();
    let n_val = (n as f64 * VALIDATION_FRACTION).round() as usize;
    let mut cut = n - n_val;
    if n_val > 0 {
        let boundary = sorted.instances[cut].start_time;
        while cut > 0 && sorted.instances[cut - 1].start_time == boundary {
            cut -= 1;
        }
    }
    let val = sorted.instances.split_off(cut);
    let validation = Dataset::new(sorted.meta.clone(), val).with_split(SplitTag::Validation);
    (sorted.with_split(SplitTag::Train), validation)
}

/// Leakage guard: every instance of `earlier` must start strictly before
/// every instance of `later`.
pub fn check_disjoint(earlier: &Dataset, later: &Dataset) -> Result<()> {
    if let (Some((_, a_max)), Some((b_min, _))) = (earlier.time_range(), later.time_range()) {
        if a_max >= b_min {
            return Err(DataError::Leakage(format!(
                "earlier set ends at {} but later set starts at {}",
                a_max.to_rfc3339(),
                b_min.to_rfc3339()
            )));
        }
    }
    Ok(())
}

/// Pairs each partition with its successor (P1-P2, P2-P3, ...), holding out
/// the chronological tail of the training side for validation.
pub fn chronological_pairs(partitions: &[Dataset]) -> Result<Vec<PartitionPair>> {
    for (i, w) in partitions.windows(2).enumerate() {
        check_disjoint(&w[0], &w[1])
            .map_err(|e| DataError::Leakage(format!("P{} / P{}: {e}", i + 1, i + 2)))?;
    }
    let mut pairs = Vec::new();
    for (i, w) in partitions.windows(2).enumerate() {
        let (train, validation) = validation_split(&w[0]);
        let mut test = w[1].clone().with_split(SplitTag::Test);
        test.sort_canonical();
        check_disjoint(&train, &validation)?;
        pairs.push(PartitionPair {
            name: format!("P{}-P{}", i + 1, i + 2),
            train,
            validation,
            test,
        });
    }
    Ok(pairs)
}

/// Randomly drops non-flare training instances until at most `ratio` of them
/// remain per flare instance. Order is preserved.
pub fn undersample(dataset: &Dataset, ratio: f64, rng: &mut Rng) -> Result<Dataset> {
    if dataset.split != SplitTag::Train {
        return Err(DataError::Contract(
            "undersampling applies to training data only".into(),
        ));
    }
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(DataError::Config(format!(
            "undersampling ratio must be positive, got {ratio}"
        )));
    }
    let flares = dataset
        .instances
        .iter()
        .filter(|i| i.label.is_flare())
        .count();
    let nf: Vec<usize> = (0..dataset.len())
        .filter(|&i| !dataset.instances[i].label.is_flare())
        .collect();
    let keep = ((ratio * flares as f64).ceil() as usize).min(nf.len());
    let mut kept = vec![false; dataset.len()];
    for j in rng.sample_indices(nf.len(), keep) {
        kept[nf[j]] = true;
    }
    let mut out = dataset.clone();
    out.instances = dataset
        .instances
        .iter()
        .enumerate()
        .filter(|(i, inst)| inst.label.is_flare() || kept[*i])
        .map(|(_, inst)| inst.clone())
        .collect();
    Ok(out)
}
