use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    average_precision, classification_metrics, confusion_matrix, f1_confidence_curve, match_detections,
    mean_average_precision, pr_curve, ApMethod, ConfusionMatrix, EvalError, F1Curve, ImageEval, MatchResult, PrCurve,
    ScoredFlag,
};
use crate::dataset::{ClassMap, NormalizedBox};
use crate::detection::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Operating point for the per-class counts and the confusion matrix.
    pub conf_threshold: f64,
    pub ap_method: ApMethod,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            conf_threshold: crate::detection::DEFAULT_CONF_THRESHOLD,
            ap_method: ApMethod::AllPoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub name: String,
    pub gt_boxes: usize,
    pub detections: usize,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    /// Threshold used for the per-class counts and the confusion matrix.
    pub conf_threshold: f64,
    pub ap_method: ApMethod,
    pub classes: Vec<ClassReport>,
    pub map: Option<f64>,
    pub map_excluded: Vec<String>,
    pub best_f1: f64,
    pub best_f1_threshold: f64,
    /// Row/column labels: class names followed by `background`.
    pub confusion_labels: Vec<String>,
    pub confusion_matrix: ConfusionMatrix,
    pub images: usize,
    pub gt_boxes: usize,
    pub detections: usize,
    pub notes: Vec<String>,
}

pub fn evaluate(
    images: &[ImageEval],
    classes: &ClassMap,
    opts: &EvalOptions,
) -> Result<(EvalReport, F1Curve), EvalError> {
    let n = classes.len();
    let cm = confusion_matrix(images, opts.iou_threshold, opts.conf_threshold, n)?;
    let m = match_detections(images, opts.iou_threshold);
    let f1 = f1_confidence_curve(images, opts.iou_threshold, n);

    let mut notes = Vec::new();
    let mut aps = BTreeMap::new();
    let mut class_reports = Vec::with_capacity(n);
    for (c, name) in classes.names().iter().enumerate() {
        let gt = m.gt_totals.get(&c).copied().unwrap_or(0);
        let ap = match pr_curve::<f64>(&m.class_flags(c), gt) {
            Ok(curve) => Some(average_precision(&curve, opts.ap_method)),
            Err(_) => {
                notes.push(format!(
                    "class {name} has no ground-truth boxes; AP undefined and left out of mAP"
                ));
                None
            }
        };
        aps.insert(c, ap);
        let counts = m.counts_at(c, opts.conf_threshold);
        let metrics = classification_metrics::<f64>(counts);
        class_reports.push(ClassReport {
            class_id: c,
            name: name.clone(),
            gt_boxes: gt,
            detections: m.detections.iter().filter(|d| d.class_id == c).count(),
            ap,
            tp: counts.tp,
            fp: counts.fp,
            fn_: counts.fn_,
            precision: metrics.precision,
            recall: metrics.recall,
            f1: metrics.f1,
            precision_defined: metrics.precision_defined,
            recall_defined: metrics.recall_defined,
            f1_defined: metrics.f1_defined,
        });
    }
    let (map, map_excluded) = match mean_average_precision(&aps) {
        Ok(mean) => (
            Some(mean.value),
            mean.excluded.iter().map(|&c| classes.names()[c].clone()).collect(),
        ),
        Err(e) => {
            notes.push(format!("mAP undefined: {e}"));
            (None, classes.names().to_vec())
        }
    };
    let mut confusion_labels = classes.names().to_vec();
    confusion_labels.push("background".into());
    let report = EvalReport {
        iou_threshold: opts.iou_threshold,
        conf_threshold: opts.conf_threshold,
        ap_method: opts.ap_method,
        classes: class_reports,
        map,
        map_excluded,
        best_f1: f1.best_f1,
        best_f1_threshold: f1.best_threshold,
        confusion_labels,
        confusion_matrix: cm,
        images: images.len(),
        gt_boxes: m.gt_totals.values().sum(),
        detections: m.detections.len(),
        notes,
    };
    Ok((report, f1))
}

/// All-class curve: every detection ranked together against the total
/// ground-truth count.
pub fn pooled_pr_curve(m: &MatchResult) -> Result<PrCurve<f64>, EvalError> {
    let flags: Vec<ScoredFlag> = m
        .detections
        .iter()
        .map(|d| ScoredFlag::new(d.confidence, d.is_tp()))
        .collect();
    pr_curve(&flags, m.gt_totals.values().sum())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> EvalError + '_ {
    move |e| EvalError::Io(format!("{}: {e}", path.display()))
}

/// Header `threshold,recall,precision`.
pub fn write_pr_csv(path: &Path, curve: &PrCurve<f64>) -> Result<(), EvalError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["threshold", "recall", "precision"]).map_err(&err)?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.recall.to_string(), p.precision.to_string()])
            .map_err(&err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

/// Header `threshold,f1_mean,f1_<class>...`.
pub fn write_f1_csv(path: &Path, curve: &F1Curve, classes: &ClassMap) -> Result<(), EvalError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    let mut header = vec!["threshold".to_string(), "f1_mean".to_string()];
    header.extend(classes.names().iter().map(|n| format!("f1_{n}")));
    w.write_record(&header).map_err(&err)?;
    for p in &curve.points {
        let mut row = vec![format!("{:.2}", p.threshold), p.mean_f1.to_string()];
        row.extend(p.per_class.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

/// One entry of a `detections.json` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePredictions {
    pub image: String,
    pub detections: Vec<Detection>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<ImagePredictions>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Parse(format!("{}: {e}", path.display())))
}

fn stem(name: &str) -> &str {
    Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name)
}

/// Join predictions to ground truth by file stem. Images present on only
/// one side get an empty list for the other.
pub fn pair_with_ground_truth(
    predictions: &[ImagePredictions],
    ground_truth: &BTreeMap<String, Vec<NormalizedBox>>,
) -> Vec<ImageEval> {
    let mut joined: BTreeMap<String, ImageEval> = ground_truth
        .iter()
        .map(|(k, gts)| {
            (
                k.clone(),
                ImageEval {
                    image: k.clone(),
                    detections: Vec::new(),
                    ground_truth: gts.clone(),
                },
            )
        })
        .collect();
    for p in predictions {
        let key = stem(&p.image).to_string();
        joined
            .entry(key.clone())
            .or_insert_with(|| ImageEval {
                image: key,
                ..Default::default()
            })
            .detections
            .extend_from_slice(&p.detections);
    }
    joined.into_values().collect()
}
