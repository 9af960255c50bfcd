//! Side-by-side result grids: one row per sample, `input | output | target`,
//! with the output's PSNR and SSIM printed underneath in a 5x7 bitmap font.

use std::path::Path;

use one2one::datasets::write_png;
use one2one::metrics::SampleMetrics;
use one2one::{ImageTensor, Result, Tensor};

const GAP: usize = 2;
const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const ADVANCE: usize = GLYPH_W + 1;
const CAPTION_H: usize = GLYPH_H + 4;
const BACKGROUND: f32 = -1.0;
const INK: f32 = 1.0;

/// Rows of a glyph, most significant of the low five bits is the left column.
fn glyph(c: char) -> [u8; GLYPH_H] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'd' => [0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F],
        _ => [0; GLYPH_H],
    }
}

pub fn caption(m: &SampleMetrics) -> String {
    format!("PSNR {:.2}dB SSIM {:.3}", m.psnr, m.ssim)
}

/// Draw `text` with its top-left corner at `(top, left)` in every channel,
/// clipping at the canvas edge.
fn draw_text(canvas: &mut ImageTensor, text: &str, top: usize, left: usize) {
    let [_, c, h, w] = canvas.shape();
    for (k, ch) in text.chars().enumerate() {
        let x0 = left + k * ADVANCE;
        for (r, bits) in glyph(ch).iter().enumerate() {
            for col in 0..GLYPH_W {
                let (y, x) = (top + r, x0 + col);
                if bits >> (GLYPH_W - 1 - col) & 1 == 1 && y < h && x < w {
                    for ch_idx in 0..c {
                        canvas.data_mut()[(ch_idx * h + y) * w + x] = INK;
                    }
                }
            }
        }
    }
}

fn blit(canvas: &mut ImageTensor, img: &ImageTensor, top: usize, left: usize) {
    let [_, c, h, w] = canvas.shape();
    let [_, _, ih, iw] = img.shape();
    for k in 0..c {
        for r in 0..ih {
            for col in 0..iw {
                canvas.data_mut()[(k * h + top + r) * w + left + col] = img.data()[(k * ih + r) * iw + col];
            }
        }
    }
}

/// One row per `(input, output, target, metrics)`. All images must share a
/// shape. The canvas widens when a caption is longer than the three images.
pub fn render(rows: &[(ImageTensor, ImageTensor, ImageTensor, SampleMetrics)]) -> ImageTensor {
    let [_, c, h, w] = rows[0].0.shape();
    let text_w = rows.iter().map(|r| caption(&r.3).len() * ADVANCE + 1).max().unwrap_or(0);
    let width = (3 * w + 2 * GAP).max(text_w);
    let row_h = h + CAPTION_H;
    let mut canvas = Tensor::full([1, c, rows.len() * row_h, width], BACKGROUND);
    for (i, (input, output, target, m)) in rows.iter().enumerate() {
        let top = i * row_h;
        for (j, img) in [input, output, target].into_iter().enumerate() {
            blit(&mut canvas, img, top, j * (w + GAP));
        }
        draw_text(&mut canvas, &caption(m), top + h + 2, 1);
    }
    canvas
}

pub fn write(path: &Path, rows: &[(ImageTensor, ImageTensor, ImageTensor, SampleMetrics)]) -> Result<()> {
    write_png(path, &render(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics() -> SampleMetrics {
        SampleMetrics {
            id: "s".into(),
            l1: 0.0,
            psnr: 23.5,
            ssim: 0.75,
        }
    }

    #[test]
    fn layout_places_each_image_in_its_column() {
        let (h, w) = (64, 64);
        let input = Tensor::full([1, 1, h, w], -0.5f32);
        let output = Tensor::full([1, 1, h, w], 0.0f32);
        let target = Tensor::full([1, 1, h, w], 0.5f32);
        let rows = vec![(input, output, target, metrics()); 2];
        let p = render(&rows);
        assert_eq!(p.shape(), [1, 1, 2 * (h + CAPTION_H), 3 * w + 2 * GAP]);
        let width = 3 * w + 2 * GAP;
        let at = |y: usize, x: usize| p.data()[y * width + x];
        let row2 = h + CAPTION_H;
        for top in [0, row2] {
            assert_eq!(at(top + 3, 3), -0.5);
            assert_eq!(at(top + 3, w + GAP + 3), 0.0);
            assert_eq!(at(top + 3, 2 * (w + GAP) + 3), 0.5);
            assert_eq!(at(top + 3, w), BACKGROUND);
        }
        let caption_ink = (h..row2).flat_map(|y| (0..width).map(move |x| (y, x))).filter(|&(y, x)| at(y, x) == INK).count();
        assert!(caption_ink > 100);
    }

    #[test]
    fn narrow_images_widen_the_canvas_to_fit_the_caption() {
        let img = Tensor::full([1, 1, 8, 8], 0.0f32);
        let p = render(&[(img.clone(), img.clone(), img, metrics())]);
        assert_eq!(p.width(), caption(&metrics()).len() * ADVANCE + 1);
    }

    #[test]
    fn every_caption_character_has_a_glyph() {
        for ch in caption(&metrics()).chars().filter(|c| *c != ' ') {
            assert!(glyph(ch).iter().any(|&b| b != 0), "missing glyph {ch}");
        }
    }
}
