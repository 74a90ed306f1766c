//! Per-pixel component labels and connected-region proposals.

use std::collections::VecDeque;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gmm::GmmParams;
use super::SegmentationError;
use crate::imaging::{gray_plane, ImageBuffer, PixelRect};
use crate::scalar::Real;

/// Default minimum region area in pixels; smaller components are speckle.
pub const DEFAULT_MIN_AREA: u64 = 64;

/// Component index for every pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelLabelMap {
    width: u32,
    height: u32,
    k: usize,
    labels: Vec<u8>,
}

impl PixelLabelMap {
    pub fn new(width: u32, height: u32, k: usize, labels: Vec<u8>) -> Result<Self, SegmentationError> {
        if labels.len() != width as usize * height as usize {
            return Err(SegmentationError::DimensionMismatch {
                expected: (width, height),
                actual: (labels.len() as u32, 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(SegmentationError::InvalidComponentCount(bad as usize));
        }
        Ok(Self {
            width,
            height,
            k,
            labels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    /// Pixel count per label.
    pub fn histogram(&self) -> Vec<u64> {
        let mut h = vec![0u64; self.k];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Most frequent label (lowest index on ties), usually the background.
    pub fn dominant_label(&self) -> u8 {
        let h = self.histogram();
        let mut best = 0;
        for (i, &c) in h.iter().enumerate() {
            if c > h[best] {
                best = i;
            }
        }
        best as u8
    }

    /// Write as an 8-bit indexed PNG; label `i` maps to palette entry `i`.
    pub fn save_indexed_png(&self, path: &Path) -> Result<(), SegmentationError> {
        let io = |e: std::io::Error| SegmentationError::Io(path.display().to_string(), e.to_string());
        let enc_err = |e: png::EncodingError| SegmentationError::Io(path.display().to_string(), e.to_string());
        let file = File::create(path).map_err(io)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(label_palette(self.k.max(1)));
        let mut writer = enc.write_header().map_err(enc_err)?;
        writer.write_image_data(&self.labels).map_err(enc_err)?;
        writer.finish().map_err(enc_err)
    }
}

/// Evenly spaced gray ramp, one entry per label.
fn label_palette(k: usize) -> Vec<u8> {
    (0..k)
        .flat_map(|i| {
            let v = if k == 1 { 0 } else { (i * 255 / (k - 1)) as u8 };
            [v, v, v]
        })
        .collect()
}

/// Assign each pixel the component maximizing `πₖ N(gray; μₖ, σ²ₖ)`.
pub fn label_pixels<T: Real>(img: &ImageBuffer, params: &GmmParams<T>) -> PixelLabelMap {
    let lut: Vec<u8> = (0..=255u8)
        .map(|v| params.most_likely(T::from_u8(v).unwrap()) as u8)
        .collect();
    let labels = gray_plane(img).into_iter().map(|g| lut[g as usize]).collect();
    PixelLabelMap {
        width: img.width(),
        height: img.height(),
        k: params.k(),
        labels,
    }
}

/// Connected same-label component that survived the area filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionProposal {
    #[serde(flatten)]
    pub bbox: PixelRect,
    pub area: u64,
    pub label: u8,
}

/// 8-connected components of each label, largest first.
///
/// Components smaller than `min_area` pixels and those carrying
/// `exclude_label` are skipped. Equal areas keep raster discovery order.
pub fn extract_regions(labels: &PixelLabelMap, min_area: u64, exclude_label: Option<u8>) -> Vec<RegionProposal> {
    let (w, h) = (labels.width as usize, labels.height as usize);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let label = labels.labels[start];
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0u64;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && labels.labels[j] == label {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if Some(label) == exclude_label || area < min_area {
            continue;
        }
        out.push(RegionProposal {
            bbox: PixelRect::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32),
            area,
            label,
        });
    }
    out.sort_by_key(|r| std::cmp::Reverse(r.area));
    out
}
