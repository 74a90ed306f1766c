//! 8-bit RGB raster and the primitives every other stage builds on:
//! stretch-resize, cropping, HSV conversion and BT.601 grayscale.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid dimensions {width}x{height}: both must be at least 1")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("rect {rect:?} exceeds {width}x{height} image")]
    OutOfBounds { rect: PixelRect, width: u32, height: u32 },
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to encode {path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major 8-bit RGB raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimensions { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(ImagingError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    /// Image filled with a single color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImagingError> {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(width, height, pixels)
    }

    /// Build from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self, ImagingError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Apply a per-pixel color map.
    pub fn map_pixels(&self, mut f: impl FnMut([u8; 3]) -> [u8; 3]) -> ImageBuffer {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for p in self.pixels() {
            pixels.extend_from_slice(&f(p));
        }
        ImageBuffer {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Load a PNG (or any format the decoder recognises) as 8-bit RGB.
    /// Alpha is dropped and palettes expanded.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImagingError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| ImagingError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w, h, rgb.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImagingError> {
        let path = path.as_ref();
        let buf = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer size checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| ImagingError::Encode {
                path: path.display().to_string(),
                source,
            })
    }
}

/// Axis-aligned rectangle in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(img: &ImageBuffer) -> Self {
        Self::new(0, 0, img.width, img.height)
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }
}

fn round_channel(v: f64) -> u8 {
    // round half up
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Bilinear stretch-resize to `tw`×`th`. Aspect ratio is not preserved.
///
/// Sample positions use the half-pixel-center convention and are clamped to
/// the source edges; channel values round half up. Resizing to the source
/// dimensions reproduces the input exactly.
pub fn resize_stretch(img: &ImageBuffer, tw: u32, th: u32) -> Result<ImageBuffer, ImagingError> {
    if tw == 0 || th == 0 {
        return Err(ImagingError::InvalidDimensions { width: tw, height: th });
    }
    if (tw, th) == img.dimensions() {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / tw as f64;
    let sy = img.height as f64 / th as f64;
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;

    let axis = |i: u32, scale: f64, max: f64| -> (u32, u32, f64) {
        let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
        let i0 = s.floor();
        let i1 = (i0 + 1.0).min(max);
        (i0 as u32, i1 as u32, s - i0)
    };
    let cols: Vec<_> = (0..tw).map(|x| axis(x, sx, max_x)).collect();

    let mut pixels = Vec::with_capacity(tw as usize * th as usize * 3);
    for y in 0..th {
        let (y0, y1, fy) = axis(y, sy, max_y);
        for &(x0, x1, fx) in &cols {
            let p00 = img.get(x0, y0);
            let p10 = img.get(x1, y0);
            let p01 = img.get(x0, y1);
            let p11 = img.get(x1, y1);
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                pixels.push(round_channel(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    ImageBuffer::new(tw, th, pixels)
}

/// Copy out the pixels covered by `r`.
pub fn crop_px(img: &ImageBuffer, r: PixelRect) -> Result<ImageBuffer, ImagingError> {
    if !r.fits_in(img.width, img.height) {
        return Err(ImagingError::OutOfBounds {
            rect: r,
            width: img.width,
            height: img.height,
        });
    }
    let mut pixels = Vec::with_capacity(r.area() as usize * 3);
    for y in r.y..r.y + r.h {
        let start = img.offset(r.x, y);
        pixels.extend_from_slice(&img.pixels[start..start + r.w as usize * 3]);
    }
    ImageBuffer::new(r.w, r.h, pixels)
}

/// Integer BT.601 luma, rounded half up.
pub fn luma(rgb: [u8; 3]) -> u8 {
    let [r, g, b] = rgb.map(u32::from);
    ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
}

/// Replace every pixel by its BT.601 luma, keeping three channels.
pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    img.map_pixels(|p| {
        let l = luma(p);
        [l, l, l]
    })
}

/// Single-channel luma plane.
pub fn gray_plane(img: &ImageBuffer) -> Vec<u8> {
    img.pixels().map(luma).collect()
}

/// Hexcone HSV with hue in degrees `[0, 360)` and saturation/value on the
/// 8-bit channel scale `[0, 255]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv<T> {
    pub h: T,
    pub s: T,
    pub v: T,
}

pub fn rgb_to_hsv<T: Real>(rgb: [u8; 3]) -> Hsv<T> {
    let [r, g, b] = rgb.map(|c| T::from_u8(c).unwrap());
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let full = T::lit(255.0);
    let s = if max == T::zero() {
        T::zero()
    } else {
        chroma / max * full
    };
    let sixty = T::lit(60.0);
    let h = if chroma == T::zero() {
        T::zero()
    } else if max == r {
        let h = sixty * ((g - b) / chroma);
        if h < T::zero() {
            h + T::lit(360.0)
        } else {
            h
        }
    } else if max == g {
        sixty * ((b - r) / chroma + T::lit(2.0))
    } else {
        sixty * ((r - g) / chroma + T::lit(4.0))
    };
    Hsv { h, s, v: max }
}

pub fn hsv_to_rgb<T: Real>(hsv: Hsv<T>) -> [u8; 3] {
    let full = T::lit(255.0);
    let v = hsv.v.clamp_to(T::zero(), full);
    let s = hsv.s.clamp_to(T::zero(), full);
    let deg = T::lit(360.0);
    let mut h = hsv.h % deg;
    if h < T::zero() {
        h = h + deg;
    }
    let c = v * s / full;
    let hp = h / T::lit(60.0);
    let x = c * (T::one() - ((hp % T::two()) - T::one()).abs());
    let m = v - c;
    let sector = hp.floor().to_u8().unwrap_or(0).min(5);
    let (r, g, b) = match sector {
        0 => (c, x, T::zero()),
        1 => (x, c, T::zero()),
        2 => (T::zero(), c, x),
        3 => (T::zero(), x, c),
        4 => (x, T::zero(), c),
        _ => (c, T::zero(), x),
    };
    [r + m, g + m, b + m].map(|ch| round_channel(ch.to_f64().unwrap()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorDirection {
    RgbToHsv,
    HsvToRgb,
}

/// Hue code units per full turn in the 8-bit HSV encoding.
const HUE_CODES: f64 = 256.0;

/// Convert between RGB and 8-bit encoded HSV (H scaled from 360° onto the
/// 256 codes of a byte, S and V on `[0, 255]`), keeping a single raster type.
///
/// Quantizing hue to 256 codes costs up to ~3 levels per channel on
/// saturated colors when going back to RGB; use [`rgb_to_hsv`] /
/// [`hsv_to_rgb`] with a float scalar where a tighter roundtrip matters.
pub fn convert_color(img: &ImageBuffer, direction: ColorDirection) -> ImageBuffer {
    match direction {
        ColorDirection::RgbToHsv => img.map_pixels(|p| {
            let hsv = rgb_to_hsv::<f64>(p);
            let h = (hsv.h * HUE_CODES / 360.0 + 0.5).floor() as u32 % HUE_CODES as u32;
            [h as u8, round_channel(hsv.s), round_channel(hsv.v)]
        }),
        ColorDirection::HsvToRgb => img.map_pixels(|[h, s, v]| {
            hsv_to_rgb(Hsv {
                h: h as f64 * 360.0 / HUE_CODES,
                s: s as f64,
                v: v as f64,
            })
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checker2() -> ImageBuffer {
        ImageBuffer::from_fn(2, 2, |x, y| if (x + y) % 2 == 0 { [0; 3] } else { [255; 3] }).unwrap()
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(matches!(
            ImageBuffer::new(0, 3, vec![]),
            Err(ImagingError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            ImageBuffer::new(2, 2, vec![0; 11]),
            Err(ImagingError::BufferSize { .. })
        ));
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let img = ImageBuffer::from_fn(416, 416, |x, y| {
            [(x % 256) as u8, (y % 256) as u8, ((x * y) % 251) as u8]
        })
        .unwrap();
        assert_eq!(resize_stretch(&img, 416, 416).unwrap(), img);
    }

    #[test]
    fn resize_checkerboard_to_single_pixel() {
        // center sample sits at (0.5, 0.5): four equal weights, 127.5 rounds up
        let out = resize_stretch(&checker2(), 1, 1).unwrap();
        assert_eq!(out.get(0, 0), [128, 128, 128]);
    }

    #[test]
    fn resize_shape_contract() {
        let img = ImageBuffer::filled(100, 50, [9, 9, 9]).unwrap();
        let out = resize_stretch(&img, 416, 416).unwrap();
        assert_eq!(out.dimensions(), (416, 416));
        assert!(out.pixels().all(|p| p == [9, 9, 9]));
        assert!(resize_stretch(&img, 0, 4).is_err());
    }

    #[test]
    fn resize_upsample_interpolates() {
        let img = ImageBuffer::from_fn(2, 1, |x, _| if x == 0 { [0; 3] } else { [200; 3] }).unwrap();
        let out = resize_stretch(&img, 4, 1).unwrap();
        // sample positions -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
        let row: Vec<u8> = (0..4).map(|x| out.get(x, 0)[0]).collect();
        assert_eq!(row, vec![0, 50, 150, 200]);
    }

    #[test]
    fn crop_cases() {
        let img = ImageBuffer::from_fn(5, 4, |x, y| [x as u8, y as u8, 7]).unwrap();
        assert_eq!(crop_px(&img, PixelRect::full(&img)).unwrap(), img);
        let one = crop_px(&img, PixelRect::new(0, 0, 1, 1)).unwrap();
        assert_eq!(one.dimensions(), (1, 1));
        assert_eq!(one.get(0, 0), [0, 0, 7]);
        let sub = crop_px(&img, PixelRect::new(2, 1, 3, 2)).unwrap();
        assert_eq!(sub.get(1, 1), [3, 2, 7]);
        assert!(matches!(
            crop_px(&img, PixelRect::new(3, 0, 3, 1)),
            Err(ImagingError::OutOfBounds { .. })
        ));
        assert!(crop_px(&img, PixelRect::new(0, 0, 0, 1)).is_err());
    }

    #[test]
    fn grayscale_values() {
        let img = ImageBuffer::from_fn(3, 1, |x, _| [[255, 255, 255], [255, 0, 0], [0, 255, 0]][x as usize]).unwrap();
        let g = to_grayscale(&img);
        assert_eq!(g.get(0, 0), [255; 3]);
        assert_eq!(g.get(1, 0), [76; 3]);
        assert_eq!(g.get(2, 0), [150; 3]);
    }

    #[test]
    fn hsv_reference_pixels() {
        let img = ImageBuffer::from_fn(2, 1, |x, _| if x == 0 { [255, 0, 0] } else { [128, 128, 128] }).unwrap();
        let hsv = convert_color(&img, ColorDirection::RgbToHsv);
        assert_eq!(hsv.get(0, 0), [0, 255, 255]);
        assert_eq!(hsv.get(1, 0), [0, 0, 128]);
        let back = convert_color(&hsv, ColorDirection::HsvToRgb);
        assert_eq!(back, img);
    }

    #[test]
    fn float_hsv_roundtrip_on_named_pixel() {
        let p = [10, 200, 50];
        assert_eq!(hsv_to_rgb(rgb_to_hsv::<f64>(p)), p);
        assert_eq!(hsv_to_rgb(rgb_to_hsv::<f32>(p)), p);
    }

    #[test]
    fn float_hsv_roundtrip_random_pixels() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let p: [u8; 3] = rng.random();
            let back = hsv_to_rgb(rgb_to_hsv::<f64>(p));
            for c in 0..3 {
                assert!((back[c] as i32 - p[c] as i32).abs() <= 1, "{p:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn byte_hsv_roundtrip_bound() {
        // exhaustive over a coarse lattice: hue quantization bounds the error at 3
        let mut worst = 0;
        for r in (0..=255).step_by(5) {
            for g in (0..=255).step_by(5) {
                for b in (0..=255).step_by(5) {
                    let img = ImageBuffer::filled(1, 1, [r as u8, g as u8, b as u8]).unwrap();
                    let back = convert_color(&convert_color(&img, ColorDirection::RgbToHsv), ColorDirection::HsvToRgb);
                    for (q, o) in back.get(0, 0).into_iter().zip(img.get(0, 0)) {
                        worst = worst.max((q as i32 - o as i32).abs());
                    }
                }
            }
        }
        assert!(worst <= 3, "worst {worst}");
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(7, 3, |x, y| [x as u8 * 30, y as u8 * 60, 5]).unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        assert_eq!(ImageBuffer::load(&path).unwrap(), img);
    }

    fn arb_image() -> impl Strategy<Value = ImageBuffer> {
        (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), (w * h * 3) as usize)
                .prop_map(move |px| ImageBuffer::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn crop_composes(img in arb_image(), a in any::<[u32; 8]>()) {
            let (w, h) = img.dimensions();
            let r1w = 1 + a[0] % w;
            let r1h = 1 + a[1] % h;
            let r1 = PixelRect::new(a[2] % (w - r1w + 1), a[3] % (h - r1h + 1), r1w, r1h);
            let r2w = 1 + a[4] % r1w;
            let r2h = 1 + a[5] % r1h;
            let r2 = PixelRect::new(a[6] % (r1w - r2w + 1), a[7] % (r1h - r2h + 1), r2w, r2h);
            let nested = crop_px(&crop_px(&img, r1).unwrap(), r2).unwrap();
            let direct = crop_px(&img, PixelRect::new(r1.x + r2.x, r1.y + r2.y, r2w, r2h)).unwrap();
            prop_assert_eq!(nested, direct);
        }

        #[test]
        fn grayscale_idempotent(img in arb_image()) {
            let once = to_grayscale(&img);
            prop_assert_eq!(to_grayscale(&once), once);
        }

        #[test]
        fn resize_same_size_identity(img in arb_image()) {
            let (w, h) = img.dimensions();
            prop_assert_eq!(resize_stretch(&img, w, h).unwrap(), img);
        }
    }
}
