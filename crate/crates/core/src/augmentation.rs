//! Offline dataset augmentation: flips, zoom crops, HSV jitter, grayscale
//! and four-image mosaics, with boxes carried through every transform.
//!
//! Each output draws its transform chain from its own ChaCha stream
//! (`seed`, stream = output index), so outputs can be produced in parallel
//! and a run is reproducible bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, LabeledImage, NormalizedBox, Rect};
use crate::imaging::{
    crop_px, hsv_to_rgb, resize_stretch, rgb_to_hsv, to_grayscale, ImageBuffer, ImagingError, PixelRect,
};
use crate::scalar::Field;

/// Crop survivors must keep at least this fraction of their area.
pub const CROP_MIN_VISIBLE: f64 = 0.25;
/// Mosaic survivors must cover at least this fraction of the output.
pub const MOSAIC_MIN_AREA: f64 = 1e-4;
pub const MAX_ZOOM: f64 = 0.49;
pub const MOSAIC_CENTER_RANGE: (f64, f64) = (0.25, 0.75);
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("mosaic needs exactly 4 images, got {0}")]
    WrongImageCount(usize),
    #[error("mosaic center ({0}, {1}) outside [0.25, 0.75]²")]
    InvalidCenter(f64, f64),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    ImagingAt {
        path: PathBuf,
        #[source]
        source: ImagingError,
    },
}

/// Augmentation recipe. Shift ranges are magnitudes of symmetric
/// intervals, e.g. `hue_shift_range = 25` samples from `[-25°, +25°]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub target_size: u32,
    pub flip_h_p: f64,
    pub flip_v_p: f64,
    pub max_zoom: f64,
    pub hue_shift_range: f64,
    pub sat_shift_range: f64,
    pub exposure_range: f64,
    pub grayscale_p: f64,
    pub mosaic_enabled: bool,
    pub outputs_per_image: usize,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            target_size: 416,
            flip_h_p: 0.5,
            flip_v_p: 0.5,
            max_zoom: MAX_ZOOM,
            hue_shift_range: 25.0,
            sat_shift_range: 0.42,
            exposure_range: 0.22,
            grayscale_p: 0.47,
            mosaic_enabled: false,
            outputs_per_image: 3,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// All probabilities and shifts zero: outputs are resized originals.
    pub fn identity() -> Self {
        Self {
            flip_h_p: 0.0,
            flip_v_p: 0.0,
            max_zoom: 0.0,
            hue_shift_range: 0.0,
            sat_shift_range: 0.0,
            exposure_range: 0.0,
            grayscale_p: 0.0,
            outputs_per_image: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidSpec(m));
        for (name, p) in [
            ("flip_h_p", self.flip_h_p),
            ("flip_v_p", self.flip_v_p),
            ("grayscale_p", self.grayscale_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(0.0..=MAX_ZOOM).contains(&self.max_zoom) {
            return bad(format!("max_zoom = {} outside [0, {MAX_ZOOM}]", self.max_zoom));
        }
        for (name, r, hi) in [
            ("hue_shift_range", self.hue_shift_range, 180.0),
            ("sat_shift_range", self.sat_shift_range, 1.0),
            ("exposure_range", self.exposure_range, 1.0),
        ] {
            if !(0.0..=hi).contains(&r) {
                return bad(format!("{name} = {r} outside [0, {hi}]"));
            }
        }
        if self.target_size < 4 {
            return bad(format!("target_size = {} is below 4", self.target_size));
        }
        if self.outputs_per_image == 0 {
            return bad("outputs_per_image must be positive".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, AugmentError> {
        let spec: Self = toml::from_str(text).map_err(|e| AugmentError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let text = fs::read_to_string(path).map_err(|source| AugmentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

/// Decoded image with its boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image: ImageBuffer,
    pub boxes: Vec<NormalizedBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// One applied step, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    Mosaic {
        center: [f64; 2],
        size: u32,
        partners: Vec<String>,
    },
    Resize {
        width: u32,
        height: u32,
    },
    Flip {
        axis: Axis,
    },
    Crop {
        zoom: f64,
        window: PixelRect,
    },
    Hsv {
        dh: f64,
        ds: f64,
        dv: f64,
    },
    Grayscale,
}

/// Mirror a box; exact in any field, up to rounding in floats.
pub fn flip_box<T: Field>(b: &NormalizedBox<T>, axis: Axis) -> NormalizedBox<T> {
    let mut out = *b;
    match axis {
        Axis::Horizontal => out.cx = T::one() - b.cx,
        Axis::Vertical => out.cy = T::one() - b.cy,
    }
    out
}

pub fn flip(li: &AnnotatedImage, axis: Axis) -> AnnotatedImage {
    let (w, h) = li.image.dimensions();
    let image = ImageBuffer::from_fn(w, h, |x, y| match axis {
        Axis::Horizontal => li.image.get(w - 1 - x, y),
        Axis::Vertical => li.image.get(x, h - 1 - y),
    })
    .expect("same dimensions as a valid image");
    AnnotatedImage {
        image,
        boxes: li.boxes.iter().map(|b| flip_box(b, axis)).collect(),
    }
}

/// Zoom window for `zoom` at offset fractions `(fx, fy)` in `[0, 1]`.
pub fn zoom_window(width: u32, height: u32, zoom: f64, fx: f64, fy: f64) -> PixelRect {
    let ww = (((1.0 - zoom) * width as f64).round() as u32).clamp(1, width);
    let wh = (((1.0 - zoom) * height as f64).round() as u32).clamp(1, height);
    let x = (fx * (width - ww) as f64).round() as u32;
    let y = (fy * (height - wh) as f64).round() as u32;
    PixelRect::new(x, y, ww, wh)
}

/// Crop `window` and stretch it back to the original size. Boxes are
/// re-expressed in window coordinates; a box keeping less than 25% of its
/// area is dropped and the rest are clipped to the window.
pub fn crop_window(li: &AnnotatedImage, window: PixelRect) -> Result<AnnotatedImage, AugmentError> {
    let (w, h) = li.image.dimensions();
    let image = resize_stretch(&crop_px(&li.image, window)?, w, h)?;
    let (fw, fh) = (w as f64, h as f64);
    let win = Rect::new(
        window.x as f64 / fw,
        window.y as f64 / fh,
        (window.x + window.w) as f64 / fw,
        (window.y + window.h) as f64 / fh,
    );
    let (sx, sy) = (win.width(), win.height());
    let boxes = li
        .boxes
        .iter()
        .filter_map(|b| {
            let r = b.corners();
            let vis = r.intersection(&win);
            if vis.area() < CROP_MIN_VISIBLE * r.area() || vis.area() <= 0.0 {
                return None;
            }
            let mapped = Rect::new(
                (vis.x1 - win.x1) / sx,
                (vis.y1 - win.y1) / sy,
                (vis.x2 - win.x1) / sx,
                (vis.y2 - win.y1) / sy,
            );
            NormalizedBox::from_corners(b.class_id, mapped).clipped()
        })
        .collect();
    Ok(AnnotatedImage { image, boxes })
}

/// Zoom crop at an rng-chosen offset.
pub fn random_crop<R: Rng + ?Sized>(
    li: &AnnotatedImage,
    zoom: f64,
    rng: &mut R,
) -> Result<(AnnotatedImage, PixelRect), AugmentError> {
    let (w, h) = li.image.dimensions();
    let window = zoom_window(w, h, zoom, rng.random(), rng.random());
    Ok((crop_window(li, window)?, window))
}

/// Rotate hue by `dh` degrees and scale saturation and value by `1 + ds`
/// and `1 + dv`, clamping to the channel range.
pub fn adjust_hsv(img: &ImageBuffer, dh: f64, ds: f64, dv: f64) -> ImageBuffer {
    img.map_pixels(|p| {
        let mut c = rgb_to_hsv::<f64>(p);
        c.h = (c.h + dh).rem_euclid(360.0);
        c.s = (c.s * (1.0 + ds)).clamp(0.0, 255.0);
        c.v = (c.v * (1.0 + dv)).clamp(0.0, 255.0);
        hsv_to_rgb(c)
    })
}

/// Quadrant rectangles (TL, TR, BL, BR) split at `center`.
pub fn mosaic_quadrants(center: (f64, f64), target: u32) -> Result<[PixelRect; 4], AugmentError> {
    let (lo, hi) = MOSAIC_CENTER_RANGE;
    if !(lo..=hi).contains(&center.0) || !(lo..=hi).contains(&center.1) {
        return Err(AugmentError::InvalidCenter(center.0, center.1));
    }
    let cx = (center.0 * target as f64).round() as u32;
    let cy = (center.1 * target as f64).round() as u32;
    if cx == 0 || cy == 0 || cx >= target || cy >= target {
        return Err(AugmentError::InvalidCenter(center.0, center.1));
    }
    Ok([
        PixelRect::new(0, 0, cx, cy),
        PixelRect::new(cx, 0, target - cx, cy),
        PixelRect::new(0, cy, cx, target - cy),
        PixelRect::new(cx, cy, target - cx, target - cy),
    ])
}

/// Tile four images into the quadrants around `center` of a
/// `target`×`target` canvas.
pub fn mosaic(lis: &[AnnotatedImage], center: (f64, f64), target: u32) -> Result<AnnotatedImage, AugmentError> {
    if lis.len() != 4 {
        return Err(AugmentError::WrongImageCount(lis.len()));
    }
    let quads = mosaic_quadrants(center, target)?;
    let t = target as f64;
    let mut canvas = vec![0u8; target as usize * target as usize * 3];
    let mut boxes = Vec::new();
    for (li, q) in lis.iter().zip(quads) {
        let tile = resize_stretch(&resize_stretch(&li.image, target, target)?, q.w, q.h)?;
        for y in 0..q.h {
            let row = &tile.as_raw()[(y * q.w * 3) as usize..((y + 1) * q.w * 3) as usize];
            let o = (((q.y + y) * target + q.x) * 3) as usize;
            canvas[o..o + row.len()].copy_from_slice(row);
        }
        let (ox, oy, sx, sy) = (q.x as f64 / t, q.y as f64 / t, q.w as f64 / t, q.h as f64 / t);
        for b in &li.boxes {
            let m = NormalizedBox::new(b.class_id, ox + b.cx * sx, oy + b.cy * sy, b.w * sx, b.h * sy);
            if m.area() >= MOSAIC_MIN_AREA {
                boxes.push(m);
            }
        }
    }
    Ok(AnnotatedImage {
        image: ImageBuffer::new(target, target, canvas)?,
        boxes,
    })
}

/// Draw one output's transform chain. Steps whose range or probability is
/// zero draw nothing and are left out.
pub fn sample_chain<R: Rng + ?Sized>(spec: &AugmentationSpec, rng: &mut R, partners: Vec<String>) -> Vec<Transform> {
    let mut chain = Vec::new();
    if spec.mosaic_enabled {
        let (lo, hi) = MOSAIC_CENTER_RANGE;
        chain.push(Transform::Mosaic {
            center: [rng.random_range(lo..=hi), rng.random_range(lo..=hi)],
            size: spec.target_size,
            partners,
        });
    } else {
        chain.push(Transform::Resize {
            width: spec.target_size,
            height: spec.target_size,
        });
    }
    if spec.flip_h_p > 0.0 && rng.random_bool(spec.flip_h_p) {
        chain.push(Transform::Flip { axis: Axis::Horizontal });
    }
    if spec.flip_v_p > 0.0 && rng.random_bool(spec.flip_v_p) {
        chain.push(Transform::Flip { axis: Axis::Vertical });
    }
    if spec.max_zoom > 0.0 {
        let zoom = rng.random_range(0.0..=spec.max_zoom);
        let t = spec.target_size;
        chain.push(Transform::Crop {
            zoom,
            window: zoom_window(t, t, zoom, rng.random(), rng.random()),
        });
    }
    let mut sym = |r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let (dh, ds, dv) = (
        sym(spec.hue_shift_range),
        sym(spec.sat_shift_range),
        sym(spec.exposure_range),
    );
    if dh != 0.0 || ds != 0.0 || dv != 0.0 {
        chain.push(Transform::Hsv { dh, ds, dv });
    }
    if spec.grayscale_p > 0.0 && rng.random_bool(spec.grayscale_p) {
        chain.push(Transform::Grayscale);
    }
    chain
}

/// Apply a chain. `mosaic_tiles` supplies the other three mosaic inputs.
pub fn apply_chain(
    source: &AnnotatedImage,
    mosaic_tiles: &[&AnnotatedImage],
    chain: &[Transform],
) -> Result<AnnotatedImage, AugmentError> {
    let mut cur = source.clone();
    for t in chain {
        cur = match t {
            Transform::Mosaic { center, size, .. } => {
                let mut four = vec![cur];
                four.extend(mosaic_tiles.iter().map(|&a| a.clone()));
                mosaic(&four, (center[0], center[1]), *size)?
            }
            Transform::Resize { width, height } => AnnotatedImage {
                image: resize_stretch(&cur.image, *width, *height)?,
                boxes: cur.boxes,
            },
            Transform::Flip { axis } => flip(&cur, *axis),
            Transform::Crop { window, .. } => crop_window(&cur, *window)?,
            Transform::Hsv { dh, ds, dv } => AnnotatedImage {
                image: adjust_hsv(&cur.image, *dh, *ds, *dv),
                boxes: cur.boxes,
            },
            Transform::Grayscale => AnnotatedImage {
                image: to_grayscale(&cur.image),
                boxes: cur.boxes,
            },
        };
    }
    Ok(cur)
}

/// One line of the augmentation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub source: String,
    pub output: String,
    pub transforms: Vec<Transform>,
}

fn load_annotated(li: &LabeledImage) -> Result<AnnotatedImage, AugmentError> {
    let image = ImageBuffer::load(&li.image).map_err(|source| AugmentError::ImagingAt {
        path: li.image.clone(),
        source,
    })?;
    Ok(AnnotatedImage {
        image,
        boxes: li.boxes.clone(),
    })
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Generate `outputs_per_image` variants of every source into `out_dir`:
/// `<stem>_aug<k>.png` plus its label file, and a JSON-lines manifest.
pub fn augment_dataset(
    sources: &[LabeledImage],
    spec: &AugmentationSpec,
    out_dir: &Path,
) -> Result<Vec<ManifestRecord>, AugmentError> {
    spec.validate()?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AugmentError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let loaded = sources.par_iter().map(load_annotated).collect::<Result<Vec<_>, _>>()?;
    let t = spec.target_size;
    // mosaic tiles are drawn from the resized set
    let resized = if spec.mosaic_enabled {
        loaded
            .par_iter()
            .map(|a| {
                Ok(AnnotatedImage {
                    image: resize_stretch(&a.image, t, t)?,
                    boxes: a.boxes.clone(),
                })
            })
            .collect::<Result<Vec<_>, AugmentError>>()?
    } else {
        Vec::new()
    };

    let jobs: Vec<(usize, usize)> = (0..sources.len())
        .flat_map(|i| (0..spec.outputs_per_image).map(move |k| (i, k)))
        .collect();
    let records = jobs
        .par_iter()
        .enumerate()
        .map(|(n, &(i, k))| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(n as u64);
            let (partner_ids, tiles): (Vec<usize>, Vec<&AnnotatedImage>) = if spec.mosaic_enabled {
                (0..3)
                    .map(|_| {
                        let j = pick_partner(&mut rng, sources.len(), i);
                        (j, &resized[j])
                    })
                    .unzip()
            } else {
                Default::default()
            };
            let partners = partner_ids.iter().map(|&j| file_name(&sources[j].image)).collect();
            let chain = sample_chain(spec, &mut rng, partners);
            let base = if spec.mosaic_enabled { &resized[i] } else { &loaded[i] };
            let out = apply_chain(base, &tiles, &chain)?;
            debug_assert_eq!(out.image.dimensions(), (t, t));

            let stem = sources[i].image.file_stem().unwrap_or_default().to_string_lossy();
            let png = out_dir.join(format!("{stem}_aug{k:03}.png"));
            out.image.save_png(&png).map_err(|source| AugmentError::ImagingAt {
                path: png.clone(),
                source,
            })?;
            dataset::write_label_file(&dataset::label_path_for(&png), &out.boxes)?;
            Ok(ManifestRecord {
                source: file_name(&sources[i].image),
                output: file_name(&png),
                transforms: chain,
            })
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;

    let manifest = out_dir.join(MANIFEST_FILE);
    let mut f = std::io::BufWriter::new(fs::File::create(&manifest).map_err(io(&manifest))?);
    for r in &records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(io(&manifest))?;
    }
    f.flush().map_err(io(&manifest))?;
    Ok(records)
}

/// Uniform over the other sources; the source itself when it is alone.
fn pick_partner<R: Rng + ?Sized>(rng: &mut R, n: usize, own: usize) -> usize {
    if n == 1 {
        return own;
    }
    let j = rng.random_range(0..n - 1);
    if j >= own {
        j + 1
    } else {
        j
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, AugmentError> {
    let text = fs::read_to_string(path).map_err(|source| AugmentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| AugmentError::InvalidSpec(format!("bad manifest line: {e}"))))
        .collect()
}
