//! Burn detection boxes and `class conf` captions into a frame.

use crate::detection::Detection;
use crate::imaging::ImageBuffer;

const BORDER: u32 = 2;
const GLYPH_W: u32 = 3;
const GLYPH_H: u32 = 5;
const SCALE: u32 = 2;

const PALETTE: [[u8; 3]; 6] = [
    [230, 60, 40],
    [40, 120, 230],
    [60, 190, 80],
    [240, 200, 40],
    [180, 70, 200],
    [40, 200, 200],
];

pub fn class_color(class_id: usize) -> [u8; 3] {
    PALETTE[class_id % PALETTE.len()]
}

/// 3×5 glyph rows, most significant of the low three bits leftmost.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_lowercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '_' => [0, 0, 0, 0, 7],
        ' ' => [0; 5],
        'a' => [2, 5, 7, 5, 5],
        'b' => [6, 5, 6, 5, 6],
        'c' => [3, 4, 4, 4, 3],
        'd' => [6, 5, 5, 5, 6],
        'e' => [7, 4, 6, 4, 7],
        'f' => [7, 4, 6, 4, 4],
        'g' => [3, 4, 5, 5, 3],
        'h' => [5, 5, 7, 5, 5],
        'i' => [7, 2, 2, 2, 7],
        'j' => [1, 1, 1, 5, 2],
        'k' => [5, 5, 6, 5, 5],
        'l' => [4, 4, 4, 4, 7],
        'm' => [5, 7, 7, 5, 5],
        'n' => [6, 5, 5, 5, 5],
        'o' => [2, 5, 5, 5, 2],
        'p' => [6, 5, 6, 4, 4],
        'q' => [2, 5, 5, 6, 3],
        'r' => [6, 5, 6, 5, 5],
        's' => [3, 4, 2, 1, 6],
        't' => [7, 2, 2, 2, 2],
        'u' => [5, 5, 5, 5, 7],
        'v' => [5, 5, 5, 5, 2],
        'w' => [5, 5, 7, 7, 5],
        'x' => [5, 5, 2, 5, 5],
        'y' => [5, 5, 2, 2, 2],
        'z' => [7, 1, 2, 4, 7],
        _ => [7, 1, 2, 0, 2],
    }
}

fn fill(img: &mut ImageBuffer, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in y0.max(0)..y1.min(h) {
        for x in x0.max(0)..x1.min(w) {
            img.put(x as u32, y as u32, rgb);
        }
    }
}

/// Pixel width of `text` as drawn by [`draw_text`].
pub fn text_width(text: &str) -> u32 {
    text.chars().count() as u32 * (GLYPH_W + 1) * SCALE
}

pub fn draw_text(img: &mut ImageBuffer, x: i64, y: i64, text: &str, rgb: [u8; 3]) {
    let s = SCALE as i64;
    for (i, c) in text.chars().enumerate() {
        let gx = x + i as i64 * (GLYPH_W as i64 + 1) * s;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W as i64 {
                if bits >> (GLYPH_W as i64 - 1 - col) & 1 == 1 {
                    let px = gx + col * s;
                    let py = y + row as i64 * s;
                    fill(img, px, py, px + s, py + s, rgb);
                }
            }
        }
    }
}

/// Outline of width [`BORDER`] just inside the given pixel box.
pub fn draw_rect(img: &mut ImageBuffer, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
    let b = BORDER as i64;
    fill(img, x0, y0, x1, y0 + b, rgb);
    fill(img, x0, y1 - b, x1, y1, rgb);
    fill(img, x0, y0, x0 + b, y1, rgb);
    fill(img, x1 - b, y0, x1, y1, rgb);
}

/// Copy of `img` with each detection outlined and captioned.
pub fn annotate(img: &ImageBuffer, dets: &[Detection], class_name: impl Fn(usize) -> String) -> ImageBuffer {
    let mut out = img.clone();
    let (w, h) = (img.width() as f64, img.height() as f64);
    for d in dets {
        let r = d.bbox.corners();
        let (x0, y0) = ((r.x1 * w).round() as i64, (r.y1 * h).round() as i64);
        let (x1, y1) = ((r.x2 * w).round() as i64, (r.y2 * h).round() as i64);
        let color = class_color(d.class_id());
        draw_rect(&mut out, x0, y0, x1, y1, color);

        let caption = format!("{} {:.2}", class_name(d.class_id()), d.confidence);
        let th = (GLYPH_H * SCALE + 2) as i64;
        // above the box when it fits, otherwise just inside the top edge
        let ty = if y0 >= th { y0 - th } else { y0 };
        fill(&mut out, x0, ty, x0 + text_width(&caption) as i64 + 1, ty + th, color);
        draw_text(&mut out, x0 + 1, ty + 1, &caption, [255, 255, 255]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_and_caption_are_drawn() {
        let img = ImageBuffer::filled(100, 80, [0; 3]).unwrap();
        let d = Detection::new(0, 0.5, 0.5, 0.4, 0.5, 0.87);
        let out = annotate(&img, &[d], |_| "crayfish".into());
        let red = class_color(0);
        // left edge at x = 30, two pixels wide; y = 40 is mid-box
        assert_eq!(out.get(30, 40), red);
        assert_eq!(out.get(31, 40), red);
        assert_eq!(out.get(32, 40), [0; 3]);
        assert_eq!(out.get(50, 40), [0; 3]);
        // caption band sits above the top edge at y = 20
        let band = (8..20).flat_map(|y| (30..60).map(move |x| (x, y)));
        let white = band.filter(|&(x, y)| out.get(x, y) == [255, 255, 255]).count();
        assert!(white > 20, "{white}");
        assert_eq!(out.dimensions(), img.dimensions());
    }

    #[test]
    fn edge_boxes_stay_in_bounds() {
        let img = ImageBuffer::filled(20, 20, [9; 3]).unwrap();
        let d = Detection::new(1, 0.05, 0.05, 0.1, 0.1, 0.5);
        let out = annotate(&img, &[d], |_| "plastic".into());
        assert_eq!(out.get(0, 0), class_color(1));
    }
}
