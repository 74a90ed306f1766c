//! Detection evaluation: IoU matching, precision/recall/F1, PR and
//! F1-confidence curves, AP/mAP and confusion matrices.

mod metrics;
mod report;

pub use metrics::{
    average_precision, classification_metrics, f1_score, mean_average_precision, pr_curve, ApMethod,
    ClassificationMetrics, ConfusionCounts, MeanAp, PrCurve, PrPoint, ScoredFlag,
};
pub use report::{
    evaluate, pair_with_ground_truth, pooled_pr_curve, read_predictions, write_f1_csv, write_pr_csv, ClassReport,
    EvalOptions, EvalReport, ImagePredictions,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{NormalizedBox, Rect};
use crate::detection::Detection;
use crate::scalar::Field;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no ground-truth boxes for this class")]
    EmptyGroundTruth,
    #[error("no class has a defined average precision")]
    NoDefinedClasses,
    #[error("class id {id} is outside the {classes} configured classes")]
    ClassOutOfRange { id: usize, classes: usize },
    #[error("{0}")]
    Io(String),
    #[error("cannot parse predictions: {0}")]
    Parse(String),
}

/// Intersection over union of two corner-format boxes; 0 when the union
/// is empty.
pub fn iou<T: Field>(a: &Rect<T>, b: &Rect<T>) -> T {
    let inter = a.intersection(b).area();
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        T::zero()
    } else {
        inter / union
    }
}

/// Detections and ground truth for one image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageEval {
    pub image: String,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<NormalizedBox>,
}

/// Outcome for one detection, in processing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedDetection {
    pub image: usize,
    pub index: usize,
    pub class_id: usize,
    pub confidence: f64,
    /// Index of the consumed ground-truth box, when a true positive.
    pub matched_gt: Option<usize>,
}

impl MatchedDetection {
    pub fn is_tp(&self) -> bool {
        self.matched_gt.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// Sorted by descending confidence; ties keep (image, index) order.
    pub detections: Vec<MatchedDetection>,
    pub gt_totals: BTreeMap<usize, usize>,
}

impl MatchResult {
    /// Confidence-sorted TP/FP flags for one class.
    pub fn class_flags(&self, class_id: usize) -> Vec<ScoredFlag> {
        self.detections
            .iter()
            .filter(|d| d.class_id == class_id)
            .map(|d| ScoredFlag::new(d.confidence, d.is_tp()))
            .collect()
    }

    /// Counts for one class over detections with confidence `>= conf_thr`.
    pub fn counts_at(&self, class_id: usize, conf_thr: f64) -> ConfusionCounts {
        let gt = self.gt_totals.get(&class_id).copied().unwrap_or(0);
        let (mut tp, mut fp) = (0, 0);
        for d in self.detections.iter().filter(|d| d.class_id == class_id) {
            if d.confidence < conf_thr {
                // sorted descending
                break;
            }
            if d.is_tp() {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        ConfusionCounts::new(tp, fp, gt - tp)
    }
}

fn confidence_order(images: &[ImageEval]) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| (0..im.detections.len()).map(move |j| (i, j)))
        .collect();
    order.sort_by(|&(ia, ja), &(ib, jb)| {
        images[ib].detections[jb]
            .confidence
            .total_cmp(&images[ia].detections[ja].confidence)
            .then((ia, ja).cmp(&(ib, jb)))
    });
    order
}

/// Best-IoU unconsumed candidate at or above `iou_thr`; ties go to the
/// lower index.
fn best_match(
    det: &NormalizedBox,
    gts: &[NormalizedBox],
    used: &[bool],
    iou_thr: f64,
    same_class: bool,
) -> Option<usize> {
    let r = det.corners();
    let mut best: Option<(usize, f64)> = None;
    for (k, g) in gts.iter().enumerate() {
        if used[k] || (same_class && g.class_id != det.class_id) {
            continue;
        }
        let v = iou(&r, &g.corners());
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.filter(|&(_, v)| v >= iou_thr).map(|(k, _)| k)
}

/// Greedy class-wise matching. Detections are visited by descending
/// confidence; each takes its best-IoU unconsumed ground truth of the same
/// class if that IoU reaches `iou_thr`, otherwise it is a false positive.
pub fn match_detections(images: &[ImageEval], iou_thr: f64) -> MatchResult {
    let mut used: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.ground_truth.len()]).collect();
    let mut gt_totals = BTreeMap::new();
    for g in images.iter().flat_map(|im| &im.ground_truth) {
        *gt_totals.entry(g.class_id).or_insert(0) += 1;
    }
    let detections = confidence_order(images)
        .into_iter()
        .map(|(i, j)| {
            let d = &images[i].detections[j];
            let matched_gt = best_match(&d.bbox, &images[i].ground_truth, &used[i], iou_thr, true);
            if let Some(k) = matched_gt {
                used[i][k] = true;
            }
            MatchedDetection {
                image: i,
                index: j,
                class_id: d.class_id(),
                confidence: d.confidence,
                matched_gt,
            }
        })
        .collect();
    MatchResult { detections, gt_totals }
}

/// One row of the F1-confidence sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Point {
    pub threshold: f64,
    pub mean_f1: f64,
    /// Indexed by class id.
    pub per_class: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Curve {
    pub points: Vec<F1Point>,
    pub best_f1: f64,
    pub best_threshold: f64,
}

pub const F1_SWEEP_STEPS: usize = 100;

/// Per-class and mean F1 at thresholds `0.00, 0.01, …, 1.00`. The mean is
/// over classes that have ground truth. The best point is the first
/// maximum, so ties go to the lowest threshold.
pub fn f1_confidence_curve(images: &[ImageEval], iou_thr: f64, num_classes: usize) -> F1Curve {
    let m = match_detections(images, iou_thr);
    let scored: Vec<usize> = (0..num_classes)
        .filter(|c| m.gt_totals.get(c).copied().unwrap_or(0) > 0)
        .collect();
    let points: Vec<F1Point> = (0..=F1_SWEEP_STEPS)
        .map(|i| {
            let t = i as f64 / F1_SWEEP_STEPS as f64;
            let per_class: Vec<f64> = (0..num_classes)
                .map(|c| classification_metrics::<f64>(m.counts_at(c, t)).f1)
                .collect();
            let mean_f1 = if scored.is_empty() {
                0.0
            } else {
                scored.iter().map(|&c| per_class[c]).sum::<f64>() / scored.len() as f64
            };
            F1Point {
                threshold: t,
                mean_f1,
                per_class,
            }
        })
        .collect();
    let best = points
        .iter()
        .fold(&points[0], |b, p| if p.mean_f1 > b.mean_f1 { p } else { b });
    F1Curve {
        best_f1: best.mean_f1,
        best_threshold: best.threshold,
        points,
    }
}

/// `(C+1)×(C+1)` counts; rows are predicted class, columns true class, and
/// index `C` is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![vec![0; num_classes + 1]; num_classes + 1],
        }
    }

    pub fn background(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, predicted: usize, truth: usize) -> usize {
        self.counts[predicted][truth]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn column_sum(&self, truth: usize) -> usize {
        self.counts.iter().map(|row| row[truth]).sum()
    }

    pub fn row_sum(&self, predicted: usize) -> usize {
        self.counts[predicted].iter().sum()
    }
}

fn check_classes(images: &[ImageEval], num_classes: usize) -> Result<(), EvalError> {
    let ids = images.iter().flat_map(|im| {
        im.detections
            .iter()
            .map(|d| d.class_id())
            .chain(im.ground_truth.iter().map(|g| g.class_id))
    });
    for id in ids {
        if id >= num_classes {
            return Err(EvalError::ClassOutOfRange {
                id,
                classes: num_classes,
            });
        }
    }
    Ok(())
}

/// Confusion matrix over detections with confidence `>= conf_thr`.
///
/// Class-wise matches land on the diagonal. Leftover detections are then
/// matched class-agnostically against leftover ground truth, so a box
/// found with the wrong class counts at `(predicted, true)`. What remains
/// goes to the background row or column.
pub fn confusion_matrix(
    images: &[ImageEval],
    iou_thr: f64,
    conf_thr: f64,
    num_classes: usize,
) -> Result<ConfusionMatrix, EvalError> {
    check_classes(images, num_classes)?;
    let mut cm = ConfusionMatrix::zeros(num_classes);
    let bg = cm.background();
    for im in images {
        let mut order: Vec<usize> = (0..im.detections.len())
            .filter(|&j| im.detections[j].confidence >= conf_thr)
            .collect();
        order.sort_by(|&a, &b| {
            im.detections[b]
                .confidence
                .total_cmp(&im.detections[a].confidence)
                .then(a.cmp(&b))
        });

        let mut used = vec![false; im.ground_truth.len()];
        let mut leftover = Vec::new();
        for &j in &order {
            let d = &im.detections[j].bbox;
            match best_match(d, &im.ground_truth, &used, iou_thr, true) {
                Some(k) => {
                    used[k] = true;
                    cm.counts[d.class_id][d.class_id] += 1;
                }
                None => leftover.push(j),
            }
        }
        for j in leftover {
            let d = &im.detections[j].bbox;
            match best_match(d, &im.ground_truth, &used, iou_thr, false) {
                Some(k) => {
                    used[k] = true;
                    cm.counts[d.class_id][im.ground_truth[k].class_id] += 1;
                }
                None => cm.counts[d.class_id][bg] += 1,
            }
        }
        for (k, g) in im.ground_truth.iter().enumerate() {
            if !used[k] {
                cm.counts[bg][g.class_id] += 1;
            }
        }
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn det(class_id: usize, cx: f64, cy: f64, w: f64, h: f64, conf: f64) -> Detection {
        Detection::new(class_id, cx, cy, w, h, conf)
    }

    fn gt(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> NormalizedBox {
        NormalizedBox::new(class_id, cx, cy, w, h)
    }

    fn one(dets: Vec<Detection>, gts: Vec<NormalizedBox>) -> Vec<ImageEval> {
        vec![ImageEval {
            image: "a".into(),
            detections: dets,
            ground_truth: gts,
        }]
    }

    /// Count unit cells of an integer grid covered by both / either box.
    fn grid_iou(a: (i32, i32, i32, i32), b: (i32, i32, i32, i32)) -> f64 {
        let inside = |r: (i32, i32, i32, i32), x: i32, y: i32| x >= r.0 && x < r.2 && y >= r.1 && y < r.3;
        let (mut i, mut u) = (0, 0);
        for x in -5..15 {
            for y in -5..15 {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                i += (ia && ib) as i32;
                u += (ia || ib) as i32;
            }
        }
        if u == 0 {
            0.0
        } else {
            i as f64 / u as f64
        }
    }

    #[test]
    fn iou_examples() {
        let a = Rect::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &Rect::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        let q = |n| Ratio::<i64>::from_integer(n);
        assert_eq!(
            iou(&Rect::new(q(0), q(0), q(2), q(2)), &Rect::new(q(1), q(0), q(3), q(2))),
            Ratio::new(1, 3)
        );
        let z = Rect::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&z, &z), 0.0);
    }

    proptest! {
        #[test]
        fn iou_matches_grid_oracle(a in (0i32..8, 0i32..8, 1i32..6, 1i32..6), b in (0i32..8, 0i32..8, 1i32..6, 1i32..6)) {
            let ra = (a.0, a.1, a.0 + a.2, a.1 + a.3);
            let rb = (b.0, b.1, b.0 + b.2, b.1 + b.3);
            let to = |r: (i32, i32, i32, i32)| Rect::new(r.0 as f64, r.1 as f64, r.2 as f64, r.3 as f64);
            let v = iou(&to(ra), &to(rb));
            prop_assert!((v - grid_iou(ra, rb)).abs() < 1e-12);
            prop_assert!((v - iou(&to(rb), &to(ra))).abs() < 1e-15);
        }
    }

    #[test]
    fn matching_examples() {
        // IoU 0.8: same height, widths 0.5 and 0.4 sharing the left edge
        let g = gt(0, 0.35, 0.5, 0.5, 0.2);
        let m = match_detections(&one(vec![det(0, 0.3, 0.5, 0.4, 0.2, 0.9)], vec![g]), 0.5);
        assert!(m.detections[0].is_tp());

        let m = match_detections(
            &one(
                vec![det(0, 0.35, 0.5, 0.5, 0.2, 0.6), det(0, 0.35, 0.5, 0.5, 0.2, 0.9)],
                vec![g],
            ),
            0.5,
        );
        let flags: Vec<(usize, bool)> = m.detections.iter().map(|d| (d.index, d.is_tp())).collect();
        assert_eq!(flags, vec![(1, true), (0, false)]);

        // IoU 0.4 with widths 0.5 and 0.2 sharing the left edge
        let m = match_detections(&one(vec![det(0, 0.2, 0.5, 0.2, 0.2, 0.9)], vec![g]), 0.5);
        assert!(!m.detections[0].is_tp());
        assert_eq!(m.counts_at(0, 0.0), ConfusionCounts::new(0, 1, 1));
    }

    #[test]
    fn matching_is_class_wise() {
        let m = match_detections(
            &one(vec![det(1, 0.5, 0.5, 0.2, 0.2, 0.9)], vec![gt(0, 0.5, 0.5, 0.2, 0.2)]),
            0.5,
        );
        assert!(!m.detections[0].is_tp());
        assert_eq!(m.counts_at(0, 0.0), ConfusionCounts::new(0, 0, 1));
    }

    fn mixed_fixture() -> Vec<ImageEval> {
        one(
            vec![
                det(0, 0.2, 0.2, 0.1, 0.1, 0.9),
                det(0, 0.6, 0.6, 0.1, 0.1, 0.8),
                det(0, 0.9, 0.1, 0.1, 0.1, 0.3),
            ],
            vec![gt(0, 0.2, 0.2, 0.1, 0.1), gt(0, 0.6, 0.6, 0.1, 0.1)],
        )
    }

    /// Filter, re-match from scratch, then F1 for each class with ground truth.
    fn sweep_oracle(images: &[ImageEval], iou_thr: f64, t: f64, classes: usize) -> f64 {
        let filtered: Vec<ImageEval> = images
            .iter()
            .map(|im| ImageEval {
                detections: im.detections.iter().filter(|d| d.confidence >= t).copied().collect(),
                ..im.clone()
            })
            .collect();
        let m = match_detections(&filtered, iou_thr);
        let mut f1s = Vec::new();
        for c in 0..classes {
            let gt = m.gt_totals.get(&c).copied().unwrap_or(0);
            if gt == 0 {
                continue;
            }
            let tp = m.detections.iter().filter(|d| d.class_id == c && d.is_tp()).count();
            let n = m.detections.iter().filter(|d| d.class_id == c).count();
            let (p, r) = (if n == 0 { 0.0 } else { tp as f64 / n as f64 }, tp as f64 / gt as f64);
            f1s.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        if f1s.is_empty() {
            0.0
        } else {
            f1s.iter().sum::<f64>() / f1s.len() as f64
        }
    }

    #[test]
    fn f1_sweep_examples() {
        let c = f1_confidence_curve(&mixed_fixture(), 0.5, 2);
        assert_eq!(c.points.len(), 101);
        assert_eq!(c.best_f1, 1.0);
        assert_eq!(c.best_threshold, 0.31);
        for p in &c.points {
            assert!((p.mean_f1 - sweep_oracle(&mixed_fixture(), 0.5, p.threshold, 2)).abs() < 1e-12);
        }

        let perfect = one(vec![det(0, 0.5, 0.5, 0.2, 0.2, 0.9)], vec![gt(0, 0.5, 0.5, 0.2, 0.2)]);
        let c = f1_confidence_curve(&perfect, 0.5, 2);
        assert!(c.points.iter().all(|p| (p.mean_f1 == 1.0) == (p.threshold <= 0.9)));
        assert_eq!(c.best_threshold, 0.0);

        let c = f1_confidence_curve(&one(vec![], vec![gt(0, 0.5, 0.5, 0.2, 0.2)]), 0.5, 2);
        assert_eq!((c.best_f1, c.best_threshold), (0.0, 0.0));
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion_matrix(&mixed_fixture(), 0.5, 0.0, 2).unwrap();
        assert_eq!(cm.get(0, 0), 2);
        assert_eq!(cm.get(0, 2), 1);
        assert_eq!(cm.total(), 3);

        let cm = confusion_matrix(&mixed_fixture(), 0.5, 0.5, 2).unwrap();
        assert_eq!(cm.counts, vec![vec![2, 0, 0], vec![0, 0, 0], vec![0, 0, 0]]);

        // IoU 0.7: widths 0.5 and 0.35 sharing the left edge
        let wrong = one(
            vec![det(1, 0.275, 0.5, 0.35, 0.2, 0.9)],
            vec![gt(0, 0.35, 0.5, 0.5, 0.2)],
        );
        let cm = confusion_matrix(&wrong, 0.5, 0.25, 2).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 0, 0], vec![1, 0, 0], vec![0, 0, 0]]);

        assert!(matches!(
            confusion_matrix(&wrong, 0.5, 0.25, 1),
            Err(EvalError::ClassOutOfRange { id: 1, classes: 1 })
        ));
    }

    fn arb_images() -> impl Strategy<Value = Vec<ImageEval>> {
        let b = (0usize..2, 0.1f64..0.9, 0.1f64..0.9, 0.05f64..0.3, 0.05f64..0.3);
        let img = (
            prop::collection::vec((b.clone(), 0.0f64..1.0), 0..6),
            prop::collection::vec(b, 0..5),
        )
            .prop_map(|(d, g)| ImageEval {
                image: String::new(),
                detections: d
                    .into_iter()
                    .map(|((c, x, y, w, h), s)| det(c, x, y, w, h, s))
                    .collect(),
                ground_truth: g.into_iter().map(|(c, x, y, w, h)| gt(c, x, y, w, h)).collect(),
            });
        prop::collection::vec(img, 1..4)
    }

    proptest! {
        #[test]
        fn count_invariants(images in arb_images(), t in 0.0f64..1.0) {
            let m = match_detections(&images, 0.5);
            for c in 0..2 {
                let k = m.counts_at(c, t);
                let gt = images.iter().flat_map(|im| &im.ground_truth).filter(|g| g.class_id == c).count();
                let surviving = images.iter().flat_map(|im| &im.detections)
                    .filter(|d| d.class_id() == c && d.confidence >= t).count();
                prop_assert_eq!(k.tp + k.fn_, gt);
                prop_assert_eq!(k.tp + k.fp, surviving);
            }
        }

        #[test]
        fn confusion_invariants(images in arb_images(), t in 0.0f64..1.0) {
            let cm = confusion_matrix(&images, 0.5, t, 2).unwrap();
            let surviving = images.iter().flat_map(|im| &im.detections).filter(|d| d.confidence >= t).count();
            prop_assert_eq!(cm.total(), surviving + cm.row_sum(cm.background()));
            for c in 0..2 {
                let gt = images.iter().flat_map(|im| &im.ground_truth).filter(|g| g.class_id == c).count();
                prop_assert_eq!(cm.column_sum(c), gt);
            }
            prop_assert_eq!(cm.get(2, 2), 0);
        }

        #[test]
        fn recall_non_decreasing(images in arb_images()) {
            let m = match_detections(&images, 0.5);
            for c in 0..2 {
                if let Ok(curve) = pr_curve::<f64>(&m.class_flags(c), m.gt_totals.get(&c).copied().unwrap_or(0)) {
                    for w in curve.points.windows(2) {
                        prop_assert!(w[0].recall <= w[1].recall);
                    }
                    for p in &curve.points {
                        prop_assert!((0.0..=1.0).contains(&p.recall) && (0.0..=1.0).contains(&p.precision));
                    }
                }
            }
        }
    }
}
