//! Detector backends, non-maximum suppression and mapping of region-level
//! detections back into full-frame coordinates.

mod external;
mod mock;

pub use external::{ExternalBackend, DEFAULT_TIMEOUT};
pub use mock::MockBackend;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NormalizedBox;
use crate::evaluation::iou;
use crate::imaging::{crop_px, resize_stretch, ImageBuffer, ImagingError, PixelRect};
use crate::segmentation::RegionProposal;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;
pub const DEFAULT_NMS_IOU: f64 = 0.45;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("cannot parse detection fixture: {0}")]
    FixtureParse(String),
    #[error("cannot spawn detector {command:?}: {source}")]
    Spawn {
        command: Vec<String>,
        #[source]
        source: std::io::Error,
    },
    #[error("detector protocol error: {0}")]
    Protocol(String),
    #[error("detector did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("detector failed: {0}")]
    Backend(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("region {index}: {source}")]
    Region {
        index: usize,
        #[source]
        source: Box<DetectError>,
    },
}

/// Predicted box with its confidence. Coordinates are normalized to the
/// image the detection refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: NormalizedBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(class_id: usize, cx: f64, cy: f64, w: f64, h: f64, confidence: f64) -> Self {
        Self {
            bbox: NormalizedBox::new(class_id, cx, cy, w, h),
            confidence,
        }
    }

    pub fn class_id(&self) -> usize {
        self.bbox.class_id
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.confidence) && self.bbox.is_valid()
    }
}

/// An image handed to a backend. `id` keys scripted backends; `path`, when
/// present, points at an on-disk PNG holding exactly `image`.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub id: &'a str,
    pub image: &'a ImageBuffer,
    pub path: Option<&'a Path>,
}

impl<'a> Frame<'a> {
    pub fn new(id: &'a str, image: &'a ImageBuffer) -> Self {
        Self { id, image, path: None }
    }
}

/// Anything that turns an image into detections.
///
/// Returned detections are relative to the given image and all have
/// `confidence >= conf_threshold`.
pub trait DetectorBackend {
    /// Size crops are stretched to before detection; `None` keeps crop size.
    fn input_size(&self) -> Option<(u32, u32)> {
        None
    }

    fn detect(&mut self, frame: &Frame<'_>, conf_threshold: f64) -> Result<Vec<Detection>, DetectError>;
}

impl<B: DetectorBackend + ?Sized> DetectorBackend for Box<B> {
    fn input_size(&self) -> Option<(u32, u32)> {
        (**self).input_size()
    }

    fn detect(&mut self, frame: &Frame<'_>, conf_threshold: f64) -> Result<Vec<Detection>, DetectError> {
        (**self).detect(frame, conf_threshold)
    }
}

fn box_iou(a: &Detection, b: &Detection) -> f64 {
    iou(&a.bbox.corners(), &b.bbox.corners())
}

/// Greedy class-wise non-maximum suppression.
///
/// Candidates are visited by descending confidence (ties: lower class id,
/// then input order). A detection is kept when its IoU with every kept
/// detection of the same class is below `iou_thr`. Output is in kept order.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(dets[a].class_id().cmp(&dets[b].class_id()))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id() == d.class_id() && box_iou(k, d) >= iou_thr);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

/// Detections mapped into frame coordinates, plus how many had to be
/// clipped back into the unit square.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegionDetections {
    pub detections: Vec<Detection>,
    pub clipped: usize,
}

/// Map a box normalized to `region` into coordinates normalized to the
/// `frame_w`×`frame_h` frame.
pub fn region_to_frame(b: &NormalizedBox, region: &PixelRect, frame_w: u32, frame_h: u32) -> NormalizedBox {
    let (fw, fh) = (frame_w as f64, frame_h as f64);
    // scale factors are exactly 1 for a full-frame region
    let (sx, sy) = (region.w as f64 / fw, region.h as f64 / fh);
    NormalizedBox::new(
        b.class_id,
        region.x as f64 / fw + b.cx * sx,
        region.y as f64 / fh + b.cy * sy,
        b.w * sx,
        b.h * sy,
    )
}

/// Backend id for region `index` of frame `frame_id`. A region covering the
/// whole frame is the frame itself.
pub fn region_id(frame_id: &str, index: usize, region: &PixelRect, img: &ImageBuffer) -> String {
    if *region == PixelRect::full(img) {
        frame_id.to_string()
    } else {
        format!("{frame_id}#{index}")
    }
}

/// Run `backend` on every region crop, map results back to frame
/// coordinates and merge them through [`nms`].
pub fn detect_on_regions<B: DetectorBackend + ?Sized>(
    img: &ImageBuffer,
    frame_id: &str,
    frame_path: Option<&Path>,
    regions: &[PixelRect],
    backend: &mut B,
    conf_thr: f64,
    iou_thr: f64,
) -> Result<RegionDetections, DetectError> {
    let (fw, fh) = img.dimensions();
    let mut merged = Vec::new();
    let mut clipped = 0;
    for (index, region) in regions.iter().enumerate() {
        let annotate = |source| DetectError::Region {
            index,
            source: Box::new(source),
        };
        let crop = crop_px(img, *region).map_err(|e| annotate(e.into()))?;
        let input = match backend.input_size() {
            Some((w, h)) => resize_stretch(&crop, w, h).map_err(|e| annotate(e.into()))?,
            None => crop,
        };
        let id = region_id(frame_id, index, region, img);
        let path = (*region == PixelRect::full(img) && input.dimensions() == img.dimensions())
            .then_some(frame_path)
            .flatten();
        let frame = Frame {
            id: &id,
            image: &input,
            path,
        };
        for d in backend.detect(&frame, conf_thr).map_err(annotate)? {
            let mapped = region_to_frame(&d.bbox, region, fw, fh);
            let inside = mapped.corners();
            let needs_clip = inside.x1 < 0.0 || inside.y1 < 0.0 || inside.x2 > 1.0 || inside.y2 > 1.0;
            let bbox = if needs_clip {
                clipped += 1;
                match mapped.clipped() {
                    Some(b) => b,
                    None => continue,
                }
            } else {
                mapped
            };
            merged.push(Detection {
                bbox,
                confidence: d.confidence,
            });
        }
    }
    Ok(RegionDetections {
        detections: nms(&merged, iou_thr),
        clipped,
    })
}

/// Region proposals' boxes, in proposal order.
pub fn proposal_rects(regions: &[RegionProposal]) -> Vec<PixelRect> {
    regions.iter().map(|r| r.bbox).collect()
}
