//! Precision/recall/F1 from counts, precision-recall curves, AP and mAP.
//!
//! Everything here is generic over [`Field`], so the same code runs on
//! `f64` and exactly on rationals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::scalar::Field;

/// Per-class counts at one confidence and IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }
}

/// Precision, recall and F1. A `false` flag marks a 0/0 that was reported
/// as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
}

fn ratio<T: Field>(num: usize, den: usize) -> (T, bool) {
    if den == 0 {
        (T::zero(), false)
    } else {
        (T::from_count(num) / T::from_count(den), true)
    }
}

/// Harmonic mean `2·p·r / (p + r)`; zero when both are zero.
pub fn f1_score<T: Field>(precision: T, recall: T) -> T {
    let den = precision + recall;
    if den == T::zero() {
        T::zero()
    } else {
        T::two() * precision * recall / den
    }
}

/// `precision = tp/(tp+fp)`, `recall = tp/(tp+fn)`, `f1 = 2pr/(p+r)`.
pub fn classification_metrics<T: Field>(c: ConfusionCounts) -> ClassificationMetrics<T> {
    let (precision, precision_defined) = ratio::<T>(c.tp, c.tp + c.fp);
    let (recall, recall_defined) = ratio::<T>(c.tp, c.tp + c.fn_);
    let f1_defined = precision + recall != T::zero();
    ClassificationMetrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        precision_defined,
        recall_defined,
        f1_defined,
    }
}

/// A detection's confidence and whether it matched a ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredFlag {
    pub confidence: f64,
    pub tp: bool,
}

impl ScoredFlag {
    pub fn new(confidence: f64, tp: bool) -> Self {
        Self { confidence, tp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint<T> {
    pub threshold: f64,
    pub recall: T,
    pub precision: T,
}

/// `(threshold, Rₙ, Pₙ)` after each ranked detection.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve<T> {
    pub points: Vec<PrPoint<T>>,
}

impl<T: Field> PrCurve<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn recalls(&self) -> Vec<T> {
        self.points.iter().map(|p| p.recall).collect()
    }

    pub fn precisions(&self) -> Vec<T> {
        self.points.iter().map(|p| p.precision).collect()
    }
}

/// Build the curve from flags sorted by descending confidence: after the
/// first `n` detections, `Pₙ = TPₙ / n` and `Rₙ = TPₙ / gt_total`.
pub fn pr_curve<T: Field>(flags: &[ScoredFlag], gt_total: usize) -> Result<PrCurve<T>, EvalError> {
    if gt_total == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let gt = T::from_count(gt_total);
    let mut tp = 0;
    let points = flags
        .iter()
        .enumerate()
        .map(|(i, f)| {
            tp += f.tp as usize;
            PrPoint {
                threshold: f.confidence,
                recall: T::from_count(tp) / gt,
                precision: T::from_count(tp) / T::from_count(i + 1),
            }
        })
        .collect();
    Ok(PrCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    /// `Σₙ (Rₙ − Rₙ₋₁) Pₙ` over every curve point, `R₀ = 0`.
    #[default]
    AllPoints,
    /// Mean of the precision envelope sampled at recall 0, 0.01, …, 1.
    Interpolated101,
}

/// Average precision of a curve.
pub fn average_precision<T: Field>(curve: &PrCurve<T>, method: ApMethod) -> T {
    match method {
        ApMethod::AllPoints => {
            let mut prev = T::zero();
            let mut ap = T::zero();
            for p in &curve.points {
                ap = ap + (p.recall - prev) * p.precision;
                prev = p.recall;
            }
            ap
        }
        ApMethod::Interpolated101 => {
            let hundred = T::from_count(100);
            let mut sum = T::zero();
            for i in 0..=100 {
                let r = T::from_count(i) / hundred;
                let best = curve
                    .points
                    .iter()
                    .filter(|p| p.recall >= r)
                    .map(|p| p.precision)
                    .fold(T::zero(), |a, b| a.max_of(b));
                sum = sum + best;
            }
            sum / T::from_count(101)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAp<T> {
    pub value: T,
    /// Classes without a defined AP, left out of the mean.
    pub excluded: Vec<usize>,
}

/// Unweighted mean over classes whose AP is defined.
pub fn mean_average_precision<T: Field>(per_class: &BTreeMap<usize, Option<T>>) -> Result<MeanAp<T>, EvalError> {
    let defined: Vec<T> = per_class.values().flatten().copied().collect();
    if defined.is_empty() {
        return Err(EvalError::NoDefinedClasses);
    }
    let sum = defined.iter().fold(T::zero(), |a, &b| a + b);
    Ok(MeanAp {
        value: sum / T::from_count(defined.len()),
        excluded: per_class
            .iter()
            .filter(|(_, ap)| ap.is_none())
            .map(|(c, _)| *c)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    fn q(n: i64, d: i64) -> Q {
        Q::new(n, d)
    }

    fn flags(tp: &[bool]) -> Vec<ScoredFlag> {
        tp.iter()
            .enumerate()
            .map(|(i, &t)| ScoredFlag::new(1.0 - i as f64 * 0.1, t))
            .collect()
    }

    #[test]
    fn direct_substitution_counts() {
        let m = classification_metrics::<Q>(ConfusionCounts::new(8, 2, 0));
        assert_eq!((m.precision, m.recall, m.f1), (q(4, 5), q(1, 1), q(8, 9)));
        let m = classification_metrics::<f64>(ConfusionCounts::new(8, 2, 0));
        assert_eq!(m.precision, 0.8);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_counts_are_marked() {
        let m = classification_metrics::<f64>(ConfusionCounts::new(0, 0, 5));
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(!m.precision_defined);
        assert!(m.recall_defined);
        assert!(!m.f1_defined);
    }

    #[test]
    fn f1_from_reported_precision_recall() {
        let f = f1_score(0.885f64, 0.92);
        assert!((f - 0.9022).abs() < 1e-4, "{f}");
    }

    #[test]
    fn worked_curve() {
        let c = pr_curve::<Q>(&flags(&[true, false, true]), 2).unwrap();
        assert_eq!(c.recalls(), vec![q(1, 2), q(1, 2), q(1, 1)]);
        assert_eq!(c.precisions(), vec![q(1, 1), q(1, 2), q(2, 3)]);
        assert_eq!(average_precision(&c, ApMethod::AllPoints), q(5, 6));
        let single = pr_curve::<Q>(&flags(&[true]), 1).unwrap();
        assert_eq!(single.points[0].recall, q(1, 1));
        assert_eq!(average_precision(&single, ApMethod::AllPoints), q(1, 1));
    }

    #[test]
    fn empty_cases() {
        let c = pr_curve::<f64>(&[], 2).unwrap();
        assert!(c.is_empty());
        assert_eq!(average_precision(&c, ApMethod::AllPoints), 0.0);
        assert_eq!(pr_curve::<f64>(&flags(&[true]), 0), Err(EvalError::EmptyGroundTruth));
    }

    #[test]
    fn interpolated_ap() {
        // perfect ranking gives 1 either way
        let c = pr_curve::<Q>(&flags(&[true, true]), 2).unwrap();
        assert_eq!(average_precision(&c, ApMethod::Interpolated101), q(1, 1));
        // [TP,FP,TP]/2: envelope is 1 for r <= 0.5 (51 samples), 2/3 above (50 samples)
        let c = pr_curve::<Q>(&flags(&[true, false, true]), 2).unwrap();
        assert_eq!(
            average_precision(&c, ApMethod::Interpolated101),
            (q(51, 1) + q(100, 3)) / q(101, 1)
        );
    }

    #[test]
    fn map_cases() {
        let m = mean_average_precision(&BTreeMap::from([(0, Some(1.0)), (1, Some(1.0))])).unwrap();
        assert_eq!(m.value, 1.0);
        let m = mean_average_precision(&BTreeMap::from([(0, Some(q(9, 10))), (1, Some(q(7, 10)))])).unwrap();
        assert_eq!(m.value, q(4, 5));
        let m = mean_average_precision(&BTreeMap::from([(0, Some(0.8)), (1, None)])).unwrap();
        assert_eq!(m.value, 0.8);
        assert_eq!(m.excluded, vec![1]);
        assert_eq!(
            mean_average_precision::<f64>(&BTreeMap::from([(0, None)])),
            Err(EvalError::NoDefinedClasses)
        );
    }
}
