//! Synthetic frames for tests, demos and benchmarks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::NormalizedBox;
use crate::imaging::{ImageBuffer, ImagingError, PixelRect};

/// Dark noisy background with one bright rectangle.
pub fn blob_frame(width: u32, height: u32, blob: PixelRect, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(width, height, |x, y| {
        let inside = x >= blob.x && x < blob.x + blob.w && y >= blob.y && y < blob.y + blob.h;
        let base: i32 = if inside { 210 } else { 40 };
        let v = (base + rng.random_range(-6..=6)).clamp(0, 255) as u8;
        [v, v.saturating_add(8), v.saturating_sub(5)]
    })
    .expect("positive dimensions")
}

/// The normalized box of a pixel rectangle.
pub fn rect_to_box(class_id: usize, r: PixelRect, width: u32, height: u32) -> NormalizedBox {
    let (w, h) = (width as f64, height as f64);
    NormalizedBox::new(
        class_id,
        (r.x as f64 + r.w as f64 / 2.0) / w,
        (r.y as f64 + r.h as f64 / 2.0) / h,
        r.w as f64 / w,
        r.h as f64 / h,
    )
}

/// Blob position for frame `i` of a synthetic sequence.
pub fn sequence_blob(i: usize, width: u32, height: u32, size: u32) -> PixelRect {
    let span_x = width - size;
    let span_y = height - size;
    let x = (i as u32 * 37) % span_x.max(1);
    let y = (i as u32 * 23) % span_y.max(1);
    PixelRect::new(x, y, size, size)
}

/// Write `n` blob frames `frame_000.png`, ... into `dir` and return their
/// paths with the blob rectangles.
pub fn write_blob_sequence(
    dir: &Path,
    n: usize,
    width: u32,
    height: u32,
    size: u32,
) -> Result<Vec<(PathBuf, PixelRect)>, ImagingError> {
    (0..n)
        .map(|i| {
            let blob = sequence_blob(i, width, height, size);
            let path = dir.join(format!("frame_{i:03}.png"));
            blob_frame(width, height, blob, i as u64).save_png(&path)?;
            Ok((path, blob))
        })
        .collect()
}
