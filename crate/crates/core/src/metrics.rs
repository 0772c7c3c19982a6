//! Binary skill scores from a confusion matrix. The flare class (label 1) is
//! the positive class.
//!
//! * TSS  = tp/(tp+fn) − fp/(fp+tn)
//! * HSS2 = 2(tp·tn − fn·fp) / ((tp+fn)(fn+tn) + (tp+fp)(fp+tn))
//! * GS   = (tp − ch)/(tp + fp + fn − ch), ch = (tp+fp)(tp+fn)/total
//! * accuracy = (tp+tn)/total
//!
//! A score whose denominator vanishes is reported as `None` ("undefined"),
//! never as 0 or NaN.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("class id {0} is not binary")]
    NotBinary(usize),
    #[error("cannot aggregate an empty list of reports")]
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// Ratio that is undefined when the denominator is zero.
fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self::new(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn_ + other.fn_,
            self.tn + other.tn,
        )
    }

    fn f(&self) -> (f64, f64, f64, f64) {
        (
            self.tp as f64,
            self.fp as f64,
            self.fn_ as f64,
            self.tn as f64,
        )
    }

    pub fn tss(&self) -> Option<f64> {
        let (tp, fp, fn_, tn) = self.f();
        Some(ratio(tp, tp + fn_)? - ratio(fp, fp + tn)?)
    }

    pub fn hss2(&self) -> Option<f64> {
        let (tp, fp, fn_, tn) = self.f();
        ratio(
            2.0 * (tp * tn - fn_ * fp),
            (tp + fn_) * (fn_ + tn) + (tp + fp) * (fp + tn),
        )
    }

    pub fn gs(&self) -> Option<f64> {
        let (tp, fp, fn_, _) = self.f();
        let chance = ratio((tp + fp) * (tp + fn_), self.total() as f64)?;
        ratio(tp - chance, tp + fp + fn_ - chance)
    }

    pub fn accuracy(&self) -> Option<f64> {
        let (tp, _, _, tn) = self.f();
        ratio(tp + tn, self.total() as f64)
    }
}

/// Counts predictions against labels (both in {0 = NF, 1 = F}).
pub fn confusion(predictions: &[usize], labels: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            (0, 0) => cm.tn += 1,
            _ => return Err(MetricsError::NotBinary(p.max(y))),
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub hss2: Option<f64>,
    pub gs: Option<f64>,
    pub tss: Option<f64>,
    pub counts: ConfusionMatrix,
}

pub fn report(cm: &ConfusionMatrix) -> MetricsReport {
    MetricsReport {
        accuracy: cm.accuracy(),
        hss2: cm.hss2(),
        gs: cm.gs(),
        tss: cm.tss(),
        counts: *cm,
    }
}

/// Sample mean and standard deviation over the defined values of one score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Values that entered the summary.
    pub n: usize,
    /// Values skipped because the score was undefined.
    pub undefined: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut defined = Vec::new();
        let mut undefined = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => undefined += 1,
            }
        }
        let n = defined.len();
        let mean = (n > 0).then(|| defined.iter().sum::<f64>() / n as f64);
        let std = mean.map(|m| {
            if n < 2 {
                0.0
            } else {
                (defined.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            }
        });
        Self {
            mean,
            std,
            n,
            undefined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub accuracy: Summary,
    pub hss2: Summary,
    pub gs: Summary,
    pub tss: Summary,
    pub reports: usize,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(AggregateReport {
        accuracy: Summary::of(reports.iter().map(|r| r.accuracy)),
        hss2: Summary::of(reports.iter().map(|r| r.hss2)),
        gs: Summary::of(reports.iter().map(|r| r.gs)),
        tss: Summary::of(reports.iter().map(|r| r.tss)),
        reports: reports.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Option<f64>, b: f64, tol: f64) -> bool {
        a.is_some_and(|a| (a - b).abs() < tol)
    }

    #[test]
    fn perfect_matrix_scores_one() {
        let cm = ConfusionMatrix::new(10, 0, 0, 90);
        for s in [cm.tss(), cm.hss2(), cm.gs(), cm.accuracy()] {
            assert!(close(s, 1.0, 1e-15));
        }
    }

    #[test]
    fn pinned_values() {
        let cm = ConfusionMatrix::new(8, 5, 2, 85);
        assert!(close(cm.tss(), 0.8 - 5.0 / 90.0, 1e-15));
        assert!(close(cm.tss(), 0.7444, 1e-4));
        assert!(close(cm.hss2(), 1340.0 / 2040.0, 1e-15));
        assert!(close(cm.hss2(), 0.6569, 1e-4));
        assert!(close(cm.gs(), 6.7 / 13.7, 1e-12));
        assert!(close(cm.gs(), 0.4890, 1e-4));
    }

    #[test]
    fn no_skill_predictors() {
        assert!(close(ConfusionMatrix::new(0, 0, 10, 90).tss(), 0.0, 1e-15));
        assert!(close(ConfusionMatrix::new(10, 90, 0, 0).hss2(), 0.0, 1e-15));
    }

    #[test]
    fn undefined_denominators() {
        // no positives in truth: TPR undefined
        let cm = ConfusionMatrix::new(0, 3, 0, 7);
        assert_eq!(cm.tss(), None);
        assert_eq!(ConfusionMatrix::default().accuracy(), None);
        assert_eq!(ConfusionMatrix::default().gs(), None);
        assert_eq!(ConfusionMatrix::new(0, 0, 0, 5).hss2(), None);
    }

    #[test]
    fn confusion_counts() {
        let labels = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        assert_eq!(
            confusion(&labels, &labels).unwrap(),
            ConfusionMatrix::new(3, 0, 0, 7)
        );
        assert_eq!(
            confusion(&[0; 10], &labels).unwrap(),
            ConfusionMatrix::new(0, 0, 3, 7)
        );
        assert!(matches!(
            confusion(&[0; 9], &labels),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(confusion(&[2], &[0]), Err(MetricsError::NotBinary(2)));
    }

    #[test]
    fn aggregate_mean_and_sample_std() {
        let mut a = report(&ConfusionMatrix::new(8, 5, 2, 85));
        let mut b = a;
        a.tss = Some(0.7);
        b.tss = Some(0.8);
        let agg = aggregate(&[a, b]).unwrap();
        assert!(close(agg.tss.mean, 0.75, 1e-12));
        assert!(close(agg.tss.std, 0.0707, 1e-4));
        let same = aggregate(&[a, a, a]).unwrap();
        assert_eq!(same.hss2.std, Some(0.0));
        assert_eq!(aggregate(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn aggregate_skips_undefined() {
        let a = report(&ConfusionMatrix::new(0, 3, 0, 7));
        let b = report(&ConfusionMatrix::new(1, 0, 0, 1));
        let agg = aggregate(&[a, b]).unwrap();
        assert_eq!(agg.tss.n, 1);
        assert_eq!(agg.tss.undefined, 1);
        assert_eq!(agg.tss.mean, Some(1.0));
    }

    #[test]
    fn report_json_schema() {
        let v = serde_json::to_value(report(&ConfusionMatrix::new(1, 2, 3, 4))).unwrap();
        for key in ["accuracy", "hss2", "gs", "tss"] {
            assert!(v[key].is_number(), "{key}");
        }
        assert_eq!(v["counts"]["fn"], 3);
    }
}
