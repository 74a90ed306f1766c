//! Intensity segmentation: histogram-driven component count, a 1-D Gaussian
//! mixture over grayscale values, per-pixel labels, connected region
//! proposals, and a temporal background subtractor.

mod background;
mod gmm;
mod labels;

pub use background::{BackgroundModel, BackgroundParams, ForegroundMask};
pub use gmm::{
    fit_gmm, fit_gmm_histogram, log_likelihood, Component, DegenerateInput, EmOptions, GmmFit, GmmParams,
    VARIANCE_FLOOR,
};
pub use labels::{extract_regions, label_pixels, PixelLabelMap, RegionProposal, DEFAULT_MIN_AREA};

use thiserror::Error;

use crate::imaging::{gray_plane, ImageBuffer};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("invalid component count {0}")]
    InvalidComponentCount(usize),
    #[error("{len} samples cannot support {k} components")]
    InsufficientData { len: usize, k: usize },
    #[error("non-finite intensity in input")]
    NonFinite,
    #[error("frame is {actual:?}, model expects {expected:?}")]
    DimensionMismatch { expected: (u32, u32), actual: (u32, u32) },
    #[error("{0}: {1}")]
    Io(String, String),
}

/// Width of the moving average applied to the intensity histogram.
pub const HISTOGRAM_SMOOTHING: usize = 7;
/// A histogram peak must exceed this fraction of the pixel count.
pub const PEAK_MIN_FRACTION: f64 = 0.005;
pub const MAX_COMPONENTS: usize = 5;

/// 256-bin grayscale histogram.
pub fn gray_histogram(img: &ImageBuffer) -> [u64; 256] {
    let mut h = [0u64; 256];
    for g in gray_plane(img) {
        h[g as usize] += 1;
    }
    h
}

/// Centered moving average; windows are truncated at the ends.
pub fn smooth_histogram(hist: &[u64; 256], window: usize) -> [f64; 256] {
    let half = window / 2;
    let mut out = [0.0; 256];
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(255);
        let sum: u64 = hist[lo..=hi].iter().sum();
        *o = sum as f64 / (hi - lo + 1) as f64;
    }
    out
}

/// Local maxima of a smoothed histogram above `min_height`. A plateau of
/// equal values counts once; the histogram ends count as lower neighbours.
pub fn count_peaks(smoothed: &[f64], min_height: f64) -> usize {
    let n = smoothed.len();
    let mut peaks = 0;
    let mut i = 0;
    while i < n {
        let v = smoothed[i];
        let mut j = i;
        while j + 1 < n && smoothed[j + 1] == v {
            j += 1;
        }
        let left_lower = i == 0 || smoothed[i - 1] < v;
        let right_lower = j == n - 1 || smoothed[j + 1] < v;
        if left_lower && right_lower && v > min_height {
            peaks += 1;
        }
        i = j + 1;
    }
    peaks
}

/// Number of mixture components suggested by the image histogram: peaks of
/// the 7-bin smoothed grayscale histogram exceeding 0.5% of the pixels,
/// clamped to `[1, 5]`.
pub fn estimate_component_count(img: &ImageBuffer) -> usize {
    let smoothed = smooth_histogram(&gray_histogram(img), HISTOGRAM_SMOOTHING);
    let min_height = PEAK_MIN_FRACTION * img.pixel_count() as f64;
    count_peaks(&smoothed, min_height).clamp(1, MAX_COMPONENTS)
}

/// Grayscale intensities of every pixel as scalars, ready for [`fit_gmm`].
pub fn intensities<T: crate::scalar::Real>(img: &ImageBuffer) -> Vec<T> {
    gray_plane(img).into_iter().map(|g| T::from_u8(g).unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_one_component() {
        let img = ImageBuffer::filled(32, 32, [90; 3]).unwrap();
        assert_eq!(estimate_component_count(&img), 1);
        let black = ImageBuffer::filled(8, 8, [0; 3]).unwrap();
        assert_eq!(estimate_component_count(&black), 1);
    }

    #[test]
    fn six_spikes_clamp_to_five() {
        let levels = [10u8, 50, 90, 130, 170, 210];
        let img = ImageBuffer::from_fn(60, 10, |x, _| [levels[(x / 10) as usize]; 3]).unwrap();
        let smoothed = smooth_histogram(&gray_histogram(&img), HISTOGRAM_SMOOTHING);
        assert_eq!(count_peaks(&smoothed, 0.005 * 600.0), 6);
        assert_eq!(estimate_component_count(&img), 5);
    }

    #[test]
    fn small_spike_below_threshold_is_ignored() {
        // 10 of 10_000 pixels = 0.1%; smoothed peak is tinier still
        let img = ImageBuffer::from_fn(100, 100, |x, y| if x < 10 && y == 0 { [250; 3] } else { [20; 3] }).unwrap();
        assert_eq!(estimate_component_count(&img), 1);
    }

    #[test]
    fn plateau_counts_once() {
        assert_eq!(count_peaks(&[0.0, 5.0, 5.0, 5.0, 0.0], 1.0), 1);
        assert_eq!(count_peaks(&[5.0, 5.0, 4.0, 6.0], 1.0), 2);
        assert_eq!(count_peaks(&[1.0, 2.0, 2.0, 3.0], 0.5), 1);
    }
}
