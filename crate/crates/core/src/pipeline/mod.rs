//! End-to-end processing: segment each frame into candidate regions, run
//! the detector on them, and write detections, annotated frames,
//! evaluation and telemetry.

pub mod annotate;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, ClassMap, DatasetError};
use crate::detection::{
    detect_on_regions, proposal_rects, DetectError, Detection, DetectorBackend, ExternalBackend, Frame, MockBackend,
    DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_IOU,
};
use crate::evaluation::{self, EvalError, EvalOptions, EvalReport, ImagePredictions};
use crate::imaging::{ImageBuffer, PixelRect};
use crate::segmentation::{
    estimate_component_count, extract_regions, fit_gmm_histogram, gray_histogram, label_pixels, EmOptions,
    RegionProposal, SegmentationError, DEFAULT_MIN_AREA,
};
use crate::telemetry::{
    self, ConstantSource, CurrentSource, FileSource, Phase, PhaseMarker, Sampler, TelemetryError, TelemetrySample,
};

pub const DETECTIONS_FILE: &str = "detections.json";
pub const FRAMES_FILE: &str = "frames.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const PR_FILE: &str = "pr.csv";
pub const F1_FILE: &str = "f1.csv";
pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const ANNOTATED_DIR: &str = "annotated";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
}

impl PipelineError {
    /// Whether the failure comes from the configuration rather than from
    /// processing.
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
            || matches!(
                self,
                PipelineError::Detect(DetectError::FixtureParse(_) | DetectError::Spawn { .. })
            )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Mixture size: estimated per frame from the histogram, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComponentCount {
    Auto(AutoTag),
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for ComponentCount {
    fn default() -> Self {
        ComponentCount::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub enabled: bool,
    pub min_area: u64,
    pub components: ComponentCount,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            min_area: DEFAULT_MIN_AREA,
            components: ComponentCount::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSpec {
    /// Scripted detections; no fixture means the backend finds nothing.
    Mock {
        #[serde(default)]
        fixture: Option<PathBuf>,
        #[serde(default)]
        input_size: Option<[u32; 2]>,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout_s")]
        timeout_s: f64,
        #[serde(default = "default_input_size")]
        input_size: Option<[u32; 2]>,
    },
}

fn default_timeout_s() -> f64 {
    crate::detection::DEFAULT_TIMEOUT.as_secs_f64()
}

fn default_input_size() -> Option<[u32; 2]> {
    Some([416, 416])
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Mock {
            fixture: None,
            input_size: None,
        }
    }
}

impl BackendSpec {
    pub fn build(&self) -> Result<Box<dyn DetectorBackend>, PipelineError> {
        Ok(match self {
            BackendSpec::Mock { fixture, input_size } => {
                let mut m = match fixture {
                    Some(p) => MockBackend::from_file(p)?,
                    None => MockBackend::default(),
                };
                if let Some([w, h]) = *input_size {
                    m = m.with_input_size((w, h));
                }
                Box::new(m)
            }
            BackendSpec::External {
                command,
                timeout_s,
                input_size,
            } => {
                if !(timeout_s.is_finite() && *timeout_s > 0.0) {
                    return Err(PipelineError::Config(format!(
                        "timeout_s = {timeout_s} must be positive"
                    )));
                }
                Box::new(
                    ExternalBackend::spawn(command)?
                        .with_timeout(Duration::from_secs_f64(*timeout_s))
                        .with_input_size(input_size.map(|[w, h]| (w, h))),
                )
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory of `*.png` frames.
    pub input: PathBuf,
    pub output: PathBuf,
    pub classes: Vec<String>,
    pub backend: BackendSpec,
    pub segmentation: SegmentationConfig,
    /// Also run the detector on the whole frame and merge the results.
    pub full_frame_also: bool,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub eval_iou: f64,
    /// Directory of label files to evaluate against.
    pub ground_truth: Option<PathBuf>,
    /// File holding the current reading in mA.
    pub telemetry_source: Option<PathBuf>,
    /// Constant current instead of a file, for dry runs.
    pub telemetry_constant_ma: Option<f64>,
    pub telemetry_period_ms: u64,
    pub annotate: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("frames"),
            output: PathBuf::from("out"),
            classes: ClassMap::default().names().to_vec(),
            backend: BackendSpec::default(),
            segmentation: SegmentationConfig::default(),
            full_frame_also: false,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            nms_iou: DEFAULT_NMS_IOU,
            eval_iou: 0.5,
            ground_truth: None,
            telemetry_source: None,
            telemetry_constant_ma: None,
            telemetry_period_ms: telemetry::DEFAULT_PERIOD.as_millis() as u64,
            annotate: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Parse a config file; relative paths inside it are taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.output);
        if let Some(p) = &mut self.ground_truth {
            fix(p);
        }
        if let Some(p) = &mut self.telemetry_source {
            fix(p);
        }
        if let BackendSpec::Mock { fixture: Some(p), .. } = &mut self.backend {
            fix(p);
        }
    }

    pub fn class_map(&self) -> Result<ClassMap, PipelineError> {
        ClassMap::new(self.classes.clone()).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [
            ("conf_threshold", self.conf_threshold),
            ("nms_iou", self.nms_iou),
            ("eval_iou", self.eval_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PipelineError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if let ComponentCount::Fixed(k) = self.segmentation.components {
            if !(1..=255).contains(&k) {
                return Err(PipelineError::Config(format!("components = {k} outside 1..=255")));
            }
        }
        if self.telemetry_period_ms == 0 {
            return Err(PipelineError::Config("telemetry_period_ms must be at least 1".into()));
        }
        if !self.input.is_dir() {
            return Err(PipelineError::Config(format!(
                "input {} is not a directory",
                self.input.display()
            )));
        }
        if let Some(gt) = &self.ground_truth {
            if !gt.is_dir() {
                return Err(PipelineError::Config(format!(
                    "ground truth {} is not a directory",
                    gt.display()
                )));
            }
        }
        self.class_map()?;
        Ok(())
    }
}

/// Per-stage wall time in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLatency {
    pub segmentation_ms: f64,
    pub detection_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub image: String,
    pub detections: Vec<Detection>,
    /// Detections per class name, zero counts included.
    pub counts: BTreeMap<String, usize>,
    pub regions: Vec<RegionProposal>,
    /// Mixture size used for segmentation.
    pub components: Option<usize>,
    /// Detections clipped back into the frame after region mapping.
    pub clipped: usize,
    pub latency: StageLatency,
    pub error: Option<String>,
}

impl FrameResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Settings used per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOptions {
    pub segmentation: SegmentationConfig,
    pub full_frame_also: bool,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub seed: u64,
}

impl From<&PipelineConfig> for FrameOptions {
    fn from(c: &PipelineConfig) -> Self {
        Self {
            segmentation: c.segmentation.clone(),
            full_frame_also: c.full_frame_also,
            conf_threshold: c.conf_threshold,
            nms_iou: c.nms_iou,
            seed: c.seed,
        }
    }
}

impl Default for FrameOptions {
    fn default() -> Self {
        (&PipelineConfig::default()).into()
    }
}

/// Backend wrapper that marks the inference phase around each call.
struct PhaseTagged<'a, B: ?Sized> {
    inner: &'a mut B,
    marker: Option<&'a PhaseMarker>,
}

impl<B: DetectorBackend + ?Sized> DetectorBackend for PhaseTagged<'_, B> {
    fn input_size(&self) -> Option<(u32, u32)> {
        self.inner.input_size()
    }

    fn detect(&mut self, frame: &Frame<'_>, conf_threshold: f64) -> Result<Vec<Detection>, DetectError> {
        let prev = self.marker.map(|m| {
            let p = m.get();
            m.set(Phase::Inference);
            p
        });
        let out = self.inner.detect(frame, conf_threshold);
        if let (Some(m), Some(p)) = (self.marker, prev) {
            m.set(p);
        }
        out
    }
}

/// Candidate regions from a mixture fit on gray levels, with the most
/// common label (the background) left out.
pub fn propose_regions(
    img: &ImageBuffer,
    cfg: &SegmentationConfig,
    seed: u64,
) -> Result<(Vec<RegionProposal>, usize), SegmentationError> {
    let k = match cfg.components {
        ComponentCount::Auto(_) => estimate_component_count(img),
        ComponentCount::Fixed(k) => k,
    };
    let opts = EmOptions::<f64> {
        seed,
        ..Default::default()
    };
    let fit = fit_gmm_histogram(&gray_histogram(img), k, &opts)?;
    let labels = label_pixels(img, &fit.params);
    let regions = extract_regions(&labels, cfg.min_area, Some(labels.dominant_label()));
    Ok((regions, fit.params.k()))
}

/// Segment, detect on the proposed regions (plus the whole frame when
/// configured or when segmentation is off) and merge through NMS.
/// Failures are recorded in the result.
pub fn process_frame<B: DetectorBackend + ?Sized>(
    img: &ImageBuffer,
    frame_id: &str,
    frame_path: Option<&Path>,
    opts: &FrameOptions,
    classes: &ClassMap,
    backend: &mut B,
    marker: Option<&PhaseMarker>,
) -> FrameResult {
    let start = Instant::now();
    let mut result = FrameResult {
        image: frame_id.to_string(),
        detections: Vec::new(),
        counts: classes.names().iter().map(|n| (n.clone(), 0)).collect(),
        regions: Vec::new(),
        components: None,
        clipped: 0,
        latency: StageLatency::default(),
        error: None,
    };
    let mut rects = Vec::new();
    if opts.segmentation.enabled {
        match propose_regions(img, &opts.segmentation, opts.seed) {
            Ok((regions, k)) => {
                rects = proposal_rects(&regions);
                result.regions = regions;
                result.components = Some(k);
            }
            Err(e) => {
                result.error = Some(format!("segmentation failed: {e}"));
                result.latency.total_ms = ms(start.elapsed());
                return result;
            }
        }
    }
    if opts.full_frame_also || !opts.segmentation.enabled {
        rects.push(PixelRect::full(img));
    }
    result.latency.segmentation_ms = ms(start.elapsed());

    let t = Instant::now();
    let mut tagged = PhaseTagged { inner: backend, marker };
    match detect_on_regions(
        img,
        frame_id,
        frame_path,
        &rects,
        &mut tagged,
        opts.conf_threshold,
        opts.nms_iou,
    ) {
        Ok(r) => {
            for d in &r.detections {
                let name = classes
                    .name(d.class_id())
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("class{}", d.class_id()));
                *result.counts.entry(name).or_insert(0) += 1;
            }
            result.detections = r.detections;
            result.clipped = r.clipped;
        }
        Err(e) => result.error = Some(format!("detection failed: {e}")),
    }
    result.latency.detection_ms = ms(t.elapsed());
    result.latency.total_ms = ms(start.elapsed());
    result
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub images: usize,
    pub failed: usize,
    pub total_detections: usize,
    pub detections_per_class: BTreeMap<String, usize>,
    pub mean_latency_ms: Option<f64>,
    pub mean_inference_current_ma: Option<f64>,
    pub mean_idle_current_ma: Option<f64>,
    pub telemetry_samples: Option<usize>,
    pub eval: Option<EvalReport>,
    pub warnings: Vec<String>,
}

/// Everything a batch run produced, before it is written out.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub frames: Vec<FrameResult>,
    pub telemetry: Option<Vec<TelemetrySample>>,
    pub summary: RunSummary,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Process every PNG in `cfg.input` (sorted by name) and write the run's
/// outputs into `cfg.output`.
///
/// Only configuration problems are returned as errors; per-frame failures
/// are recorded in the frame results and counted in the summary.
pub fn run_batch(cfg: &PipelineConfig) -> Result<BatchOutput, PipelineError> {
    cfg.validate()?;
    let mut backend = cfg.backend.build()?;
    let source: Option<Box<dyn CurrentSource>> = match (&cfg.telemetry_source, cfg.telemetry_constant_ma) {
        (Some(p), _) => Some(Box::new(FileSource::new(p))),
        (None, Some(c)) => Some(Box::new(ConstantSource(c))),
        (None, None) => None,
    };
    run_batch_with(cfg, backend.as_mut(), source)
}

pub fn run_batch_with(
    cfg: &PipelineConfig,
    backend: &mut dyn DetectorBackend,
    source: Option<Box<dyn CurrentSource>>,
) -> Result<BatchOutput, PipelineError> {
    cfg.validate()?;
    let classes = cfg.class_map()?;
    let opts = FrameOptions::from(cfg);
    let inputs = dataset::list_pngs(&cfg.input)?;
    let mut warnings = Vec::new();
    if inputs.is_empty() {
        let w = format!("no PNG frames in {}", cfg.input.display());
        log::warn!("{w}");
        warnings.push(w);
    }
    fs::create_dir_all(&cfg.output).map_err(io_err(&cfg.output))?;
    let annotated_dir = cfg.output.join(ANNOTATED_DIR);
    if cfg.annotate && !inputs.is_empty() {
        fs::create_dir_all(&annotated_dir).map_err(io_err(&annotated_dir))?;
    }

    let marker = PhaseMarker::new(Phase::Idle);
    let sampler = match source {
        Some(src) => Some(Sampler::new(src, marker.clone()).spawn(Duration::from_millis(cfg.telemetry_period_ms))?),
        None => None,
    };

    let mut frames = Vec::with_capacity(inputs.len());
    for path in &inputs {
        marker.set(Phase::Load);
        let loaded = ImageBuffer::load(path);
        marker.set(Phase::Idle);
        let frame = match loaded {
            Ok(img) => {
                let r = process_frame(&img, &stem(path), Some(path), &opts, &classes, backend, Some(&marker));
                if cfg.annotate {
                    let out = annotate::annotate(&img, &r.detections, |c| {
                        classes.name(c).map(str::to_string).unwrap_or_else(|| c.to_string())
                    });
                    let p = annotated_dir.join(file_name(path));
                    if let Err(e) = out.save_png(&p) {
                        warnings.push(format!("cannot write {}: {e}", p.display()));
                    }
                }
                r
            }
            Err(e) => FrameResult {
                image: stem(path),
                detections: Vec::new(),
                counts: classes.names().iter().map(|n| (n.clone(), 0)).collect(),
                regions: Vec::new(),
                components: None,
                clipped: 0,
                latency: StageLatency::default(),
                error: Some(format!("cannot load frame: {e}")),
            },
        };
        if let Some(e) = &frame.error {
            log::warn!("{}: {e}", frame.image);
        }
        frames.push(frame);
    }
    let telemetry = sampler.map(|h| {
        let (samples, skipped) = h.stop();
        if skipped > 0 {
            warnings.push(format!("{skipped} telemetry reads failed and were skipped"));
        }
        samples
    });

    let predictions: Vec<ImagePredictions> = inputs
        .iter()
        .zip(&frames)
        .map(|(p, f)| ImagePredictions {
            image: file_name(p),
            detections: f.detections.clone(),
        })
        .collect();
    write_json(&cfg.output.join(DETECTIONS_FILE), &predictions)?;
    write_json(&cfg.output.join(FRAMES_FILE), &frames)?;

    let eval = match &cfg.ground_truth {
        Some(gt_dir) => {
            let gt = dataset::read_label_dir(gt_dir, &classes)?;
            let images = evaluation::pair_with_ground_truth(&predictions, &gt);
            let eval_opts = EvalOptions {
                iou_threshold: cfg.eval_iou,
                conf_threshold: cfg.conf_threshold,
                ..Default::default()
            };
            let (report, f1) = evaluation::evaluate(&images, &classes, &eval_opts)?;
            write_json(&cfg.output.join(REPORT_FILE), &report)?;
            evaluation::write_f1_csv(&cfg.output.join(F1_FILE), &f1, &classes)?;
            match evaluation::pooled_pr_curve(&evaluation::match_detections(&images, cfg.eval_iou)) {
                Ok(curve) => evaluation::write_pr_csv(&cfg.output.join(PR_FILE), &curve)?,
                Err(e) => warnings.push(format!("no PR curve: {e}")),
            }
            Some(report)
        }
        None => None,
    };

    if let Some(samples) = &telemetry {
        telemetry::write_telemetry_csv(samples, &cfg.output.join(TELEMETRY_FILE))?;
    }

    let mut per_class: BTreeMap<String, usize> = classes.names().iter().map(|n| (n.clone(), 0)).collect();
    for f in &frames {
        for (k, v) in &f.counts {
            *per_class.entry(k.clone()).or_insert(0) += v;
        }
    }
    let ok: Vec<&FrameResult> = frames.iter().filter(|f| !f.failed()).collect();
    let summary = RunSummary {
        images: frames.len(),
        failed: frames.len() - ok.len(),
        total_detections: per_class.values().sum(),
        detections_per_class: per_class,
        mean_latency_ms: (!ok.is_empty()).then(|| ok.iter().map(|f| f.latency.total_ms).sum::<f64>() / ok.len() as f64),
        mean_inference_current_ma: telemetry
            .as_deref()
            .and_then(|s| telemetry::mean_inference_current(s).ok()),
        mean_idle_current_ma: telemetry
            .as_deref()
            .and_then(|s| telemetry::mean_current(s, Phase::Idle).ok()),
        telemetry_samples: telemetry.as_ref().map(Vec::len),
        eval,
        warnings,
    };
    write_json(&cfg.output.join(SUMMARY_FILE), &summary)?;
    Ok(BatchOutput {
        frames,
        telemetry,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{blob_frame, rect_to_box};

    struct Failing;

    impl DetectorBackend for Failing {
        fn detect(&mut self, _: &Frame<'_>, _: f64) -> Result<Vec<Detection>, DetectError> {
            Err(DetectError::Backend("boom".into()))
        }
    }

    fn crop_box_mock(id: &str) -> MockBackend {
        let mut m = MockBackend::default();
        m.insert(id, vec![Detection::new(0, 0.5, 0.5, 1.0, 1.0, 0.9)]);
        m
    }

    #[test]
    fn blob_frame_yields_one_crayfish() {
        let blob = PixelRect::new(100, 60, 80, 80);
        let img = blob_frame(320, 240, blob, 3);
        let classes = ClassMap::default();
        let mut backend = crop_box_mock("f#0");
        let r = process_frame(&img, "f", None, &FrameOptions::default(), &classes, &mut backend, None);
        assert_eq!(r.error, None);
        assert_eq!(r.regions.len(), 1);
        assert_eq!(r.regions[0].bbox, blob);
        assert_eq!(r.detections.len(), 1);
        let want = rect_to_box(0, blob, 320, 240);
        let got = r.detections[0].bbox;
        assert!((got.cx - want.cx).abs() < 1e-12 && (got.w - want.w).abs() < 1e-12);
        assert_eq!(
            r.counts,
            BTreeMap::from([("crayfish".into(), 1), ("plastic".into(), 0)])
        );
    }

    #[test]
    fn segmentation_off_with_empty_backend() {
        let img = blob_frame(64, 48, PixelRect::new(10, 10, 20, 20), 0);
        let opts = FrameOptions {
            segmentation: SegmentationConfig {
                enabled: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = process_frame(
            &img,
            "f",
            None,
            &opts,
            &ClassMap::default(),
            &mut MockBackend::default(),
            None,
        );
        assert!(r.detections.is_empty());
        assert!(r.counts.values().all(|&c| c == 0));
        assert_eq!(r.components, None);
    }

    #[test]
    fn segmentation_off_equals_single_full_region() {
        let img = blob_frame(64, 48, PixelRect::new(10, 10, 20, 20), 0);
        let mut m = MockBackend::default();
        m.insert(
            "f",
            vec![
                Detection::new(0, 0.3, 0.3, 0.2, 0.2, 0.9),
                Detection::new(0, 0.31, 0.3, 0.2, 0.2, 0.8),
                Detection::new(1, 0.7, 0.7, 0.1, 0.1, 0.5),
            ],
        );
        let opts = FrameOptions {
            segmentation: SegmentationConfig {
                enabled: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = process_frame(&img, "f", None, &opts, &ClassMap::default(), &mut m.clone(), None);
        let direct = detect_on_regions(&img, "f", None, &[PixelRect::full(&img)], &mut m, 0.25, 0.45).unwrap();
        assert_eq!(r.detections, direct.detections);
        assert_eq!(r.detections.len(), 2);
    }

    #[test]
    fn full_frame_also_merges() {
        let blob = PixelRect::new(20, 20, 30, 30);
        let img = blob_frame(96, 96, blob, 1);
        let mut m = crop_box_mock("f#0");
        // the same object seen on the full frame, slightly shifted
        let b = rect_to_box(0, blob, 96, 96);
        m.insert("f", vec![Detection::new(0, b.cx + 0.01, b.cy, b.w, b.h, 0.7)]);
        let opts = FrameOptions {
            full_frame_also: true,
            ..Default::default()
        };
        let r = process_frame(&img, "f", None, &opts, &ClassMap::default(), &mut m, None);
        assert_eq!(r.detections.len(), 1);
        assert_eq!(r.detections[0].confidence, 0.9);
    }

    #[test]
    fn backend_failure_is_recorded() {
        let img = blob_frame(64, 48, PixelRect::new(10, 10, 20, 20), 0);
        let r = process_frame(
            &img,
            "f",
            None,
            &FrameOptions::default(),
            &ClassMap::default(),
            &mut Failing,
            None,
        );
        assert!(r.failed());
        assert!(r.error.as_deref().unwrap().contains("boom"));
    }

    #[test]
    fn phase_is_inference_only_inside_backend_calls() {
        struct Probe(PhaseMarker, Vec<Phase>);
        impl DetectorBackend for Probe {
            fn detect(&mut self, _: &Frame<'_>, _: f64) -> Result<Vec<Detection>, DetectError> {
                self.1.push(self.0.get());
                Ok(vec![])
            }
        }
        let marker = PhaseMarker::new(Phase::Idle);
        let mut p = Probe(marker.clone(), vec![]);
        let img = blob_frame(64, 48, PixelRect::new(10, 10, 20, 20), 0);
        let opts = FrameOptions {
            full_frame_also: true,
            ..Default::default()
        };
        process_frame(&img, "f", None, &opts, &ClassMap::default(), &mut p, Some(&marker));
        assert!(!p.1.is_empty());
        assert!(p.1.iter().all(|&ph| ph == Phase::Inference));
        assert_eq!(marker.get(), Phase::Idle);
    }

    #[test]
    fn config_parsing() {
        let cfg = PipelineConfig::from_toml_str(
            r#"
            input = "frames"
            conf_threshold = 0.3
            [backend]
            kind = "external"
            command = ["python3", "det.py"]
            [segmentation]
            components = 3
            min_area = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.segmentation.components, ComponentCount::Fixed(3));
        assert_eq!(cfg.conf_threshold, 0.3);
        assert!(
            matches!(cfg.backend, BackendSpec::External { timeout_s, input_size: Some([416, 416]), .. } if timeout_s == 30.0)
        );
        let auto = PipelineConfig::from_toml_str("[segmentation]\ncomponents = \"auto\"").unwrap();
        assert_eq!(auto.segmentation.components, ComponentCount::default());
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml_str("[segmentation]\ncomponents = \"many\"").is_err());
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig {
            input: dir.path().to_path_buf(),
            ..Default::default()
        };
        cfg.validate().unwrap();
        cfg.conf_threshold = 1.5;
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        cfg.conf_threshold = 0.5;
        cfg.input = dir.path().join("missing");
        assert!(cfg.validate().unwrap_err().is_config());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(
            &p,
            "input = \"in\"\noutput = \"/abs/out\"\n[backend]\nkind = \"mock\"\nfixture = \"d.json\"\n",
        )
        .unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.input, dir.path().join("in"));
        assert_eq!(cfg.output, PathBuf::from("/abs/out"));
        assert!(
            matches!(cfg.backend, BackendSpec::Mock { fixture: Some(ref f), .. } if *f == dir.path().join("d.json"))
        );
    }
}
