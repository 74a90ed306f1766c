//! Underwater debris and invasive-species monitoring toolkit.
//!
//! The pipeline segments each frame with a Gaussian mixture on gray
//! levels, sends the candidate regions to a detector backend, merges the
//! results and scores them against ground truth. Dataset handling,
//! offline augmentation and current telemetry round it out.
//!
//! Numeric code is generic over the scalar: metrics accept any
//! [`scalar::Field`] (so they run exactly on [`Rational`]), mixture fitting
//! any [`scalar::Real`]. The aliases below fix the common choices.

pub mod augmentation;
pub mod dataset;
pub mod detection;
pub mod evaluation;
pub mod imaging;
pub mod pipeline;
pub mod scalar;
pub mod segmentation;
pub mod synth;
pub mod telemetry;

pub use augmentation::{AugmentError, AugmentationSpec};
pub use dataset::{ClassMap, DatasetError, LabelError};
pub use detection::{DetectError, Detection, DetectorBackend};
pub use evaluation::{EvalError, EvalReport};
pub use imaging::{ImageBuffer, ImagingError};
pub use pipeline::{PipelineConfig, PipelineError};
pub use segmentation::SegmentationError;
pub use telemetry::TelemetryError;

/// Exact rational scalar for metric checks.
pub type Rational = num_rational::Ratio<i64>;

pub type Box64 = dataset::NormalizedBox<f64>;
pub type ExactBox = dataset::NormalizedBox<Rational>;
pub type Rect64 = dataset::Rect<f64>;
pub type ExactRect = dataset::Rect<Rational>;

pub type PrCurve64 = evaluation::PrCurve<f64>;
pub type ExactPrCurve = evaluation::PrCurve<Rational>;
pub type Metrics64 = evaluation::ClassificationMetrics<f64>;
pub type ExactMetrics = evaluation::ClassificationMetrics<Rational>;

pub type Gmm = segmentation::GmmParams<f64>;
pub type Gmm32 = segmentation::GmmParams<f32>;
pub type GmmFit64 = segmentation::GmmFit<f64>;
pub type BackgroundModel64 = segmentation::BackgroundModel<f64>;
pub type BackgroundModel32 = segmentation::BackgroundModel<f32>;
