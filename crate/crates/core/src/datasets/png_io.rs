//! 8-bit PNG reading and writing for `[-1, 1]` image tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// `p` in `0..=255` to `2 * p / 255 - 1`.
pub fn pixel_to_unit(p: u8) -> f32 {
    (2.0 * f64::from(p) / 255.0 - 1.0) as f32
}

/// Inverse of [`pixel_to_unit`], clamping and rounding to the nearest level.
pub fn unit_to_pixel(v: f32) -> u8 {
    let t = (f64::from(v).clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0;
    t.round() as u8
}

fn image_err(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Decode a grayscale or RGB PNG (alpha ignored) into a `(1, channels, h, w)`
/// tensor. Gray to RGB replicates; RGB to gray uses Rec. 601 luma.
pub fn read_png(path: &Path, channels: usize) -> Result<ImageTensor> {
    if channels != 1 && channels != 3 {
        return Err(Error::Config(format!("channels must be 1 or 3, got {channels}")));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| image_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(image_err(path, "palette images are not supported")),
    };
    let bytes = &buf[..info.buffer_size()];
    let stride = info.line_size;
    let mut data = vec![0f32; channels * h * w];
    for r in 0..h {
        let row = &bytes[r * stride..];
        for c in 0..w {
            let px = &row[c * src_channels..(c + 1) * src_channels];
            let (rr, gg, bb) = if src_channels >= 3 {
                (px[0], px[1], px[2])
            } else {
                (px[0], px[0], px[0])
            };
            if channels == 1 {
                let v = if src_channels >= 3 {
                    let l = (299 * u32::from(rr) + 587 * u32::from(gg) + 114 * u32::from(bb) + 500) / 1000;
                    l as u8
                } else {
                    rr
                };
                data[r * w + c] = pixel_to_unit(v);
            } else {
                for (k, v) in [rr, gg, bb].into_iter().enumerate() {
                    data[k * h * w + r * w + c] = pixel_to_unit(v);
                }
            }
        }
    }
    ImageTensor::from_vec([1, channels, h, w], data)
}

/// Encode sample 0 of a 1- or 3-channel tensor as an 8-bit PNG.
pub fn write_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let [_, c, h, w] = img.shape();
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::shape("1 or 3 channels", img.shape())),
    };
    let mut bytes = vec![0u8; c * h * w];
    let d = img.data();
    for r in 0..h {
        for col in 0..w {
            for k in 0..c {
                bytes[(r * w + col) * c + k] = unit_to_pixel(d[k * h * w + r * w + col]);
            }
        }
    }
    write_png_bytes(path, w, h, color, &bytes)
}

pub(crate) fn write_png_bytes(path: &Path, w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| image_err(path, e))?;
    writer.write_image_data(bytes).map_err(|e| image_err(path, e))?;
    writer.finish().map_err(|e| image_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_endpoints() {
        assert_eq!(pixel_to_unit(255), 1.0);
        assert_eq!(pixel_to_unit(0), -1.0);
        assert!((f64::from(pixel_to_unit(128)) - (2.0 * 128.0 / 255.0 - 1.0)).abs() < 1e-7);
        for p in 0..=255u8 {
            assert_eq!(unit_to_pixel(pixel_to_unit(p)), p);
        }
    }

    #[test]
    fn png_round_trip_is_exact_on_grid() {
        let dir = tempfile::tempdir().unwrap();
        let gray = ImageTensor::from_fn([1, 1, 5, 7], |[_, _, h, w]| pixel_to_unit(((h * 7 + w) * 7 % 256) as u8));
        let p = dir.path().join("g.png");
        write_png(&p, &gray).unwrap();
        assert_eq!(read_png(&p, 1).unwrap(), gray);
        let rgb = ImageTensor::from_fn([1, 3, 4, 3], |[_, c, h, w]| pixel_to_unit((c * 80 + h * 10 + w) as u8));
        let p = dir.path().join("c.png");
        write_png(&p, &rgb).unwrap();
        assert_eq!(read_png(&p, 3).unwrap(), rgb);
        let replicated = read_png(&dir.path().join("g.png"), 3).unwrap();
        assert_eq!(replicated.shape(), [1, 3, 5, 7]);
        assert_eq!(replicated.data()[..35], gray.data()[..]);
        assert_eq!(replicated.data()[35..70], gray.data()[..]);
    }

    #[test]
    fn rgb_to_gray_luma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        write_png_bytes(&p, 1, 1, png::ColorType::Rgb, &[200, 100, 50]).unwrap();
        let g = read_png(&p, 1).unwrap();
        let expected = ((299 * 200 + 587 * 100 + 114 * 50) as f64 / 1000.0).round() as u8;
        assert_eq!(g.data()[0], pixel_to_unit(expected));
    }
}
