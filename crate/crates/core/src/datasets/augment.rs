use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

use super::PairedSample;

/// Resize-then-random-crop jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub load_size: usize,
    pub crop_size: usize,
    pub enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            load_size: 286,
            crop_size: 256,
            enabled: true,
        }
    }
}

impl AugmentConfig {
    /// The same 286/256 jitter ratio at 64 pixels.
    pub fn desk() -> Self {
        AugmentConfig {
            load_size: 72,
            crop_size: 64,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.load_size < self.crop_size {
            return Err(Error::Config(format!(
                "augmentation needs load_size >= crop_size > 0, got load_size={} crop_size={}",
                self.load_size, self.crop_size
            )));
        }
        Ok(())
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    let [n, c, h, w] = img.shape();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let taps = |src: usize, dst: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (pos.floor() as usize).min(src - 1);
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect()
    };
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let src = img.data();
    let mut out = vec![0f32; n * c * out_h * out_w];
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = f64::from(s[y0 * w + x0]) * (1.0 - fx) + f64::from(s[y0 * w + x1]) * fx;
                let bot = f64::from(s[y1 * w + x0]) * (1.0 - fx) + f64::from(s[y1 * w + x1]) * fx;
                d[oy * out_w + ox] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    ImageTensor::from_vec([n, c, out_h, out_w], out).expect("sizes computed above")
}

/// `size x size` window with top-left corner `(top, left)`.
pub fn crop(img: &ImageTensor, top: usize, left: usize, size: usize) -> Result<ImageTensor> {
    let [n, c, h, w] = img.shape();
    if top + size > h || left + size > w {
        return Err(Error::shape(
            format!("crop {size}x{size} at ({top}, {left}) inside image"),
            img.shape(),
        ));
    }
    Ok(ImageTensor::from_fn([n, c, size, size], |[i, k, y, x]| {
        img.get([i, k, top + y, left + x])
    }))
}

/// Resize both images to `load_size` and crop both at one shared random
/// offset. The crop offset is returned alongside the jittered pair.
pub fn augment_pair_with_offset<R: Rng + ?Sized>(
    sample: &PairedSample,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(PairedSample, (usize, usize))> {
    cfg.validate()?;
    let [_, _, h, w] = sample.x.shape();
    if h < cfg.crop_size || w < cfg.crop_size {
        return Err(Error::Dataset(format!(
            "sample `{}` is {h}x{w}, smaller than crop size {}",
            sample.id, cfg.crop_size
        )));
    }
    if !cfg.enabled {
        let s = cfg.crop_size;
        let out = PairedSample {
            id: sample.id.clone(),
            x: resize_bilinear(&sample.x, s, s),
            y: resize_bilinear(&sample.y, s, s),
        };
        return Ok((out, (0, 0)));
    }
    let l = cfg.load_size;
    let slack = l - cfg.crop_size;
    let top = rng.random_range(0..=slack);
    let left = rng.random_range(0..=slack);
    let x = crop(&resize_bilinear(&sample.x, l, l), top, left, cfg.crop_size)?;
    let y = crop(&resize_bilinear(&sample.y, l, l), top, left, cfg.crop_size)?;
    Ok((
        PairedSample {
            id: sample.id.clone(),
            x,
            y,
        },
        (top, left),
    ))
}

pub fn augment_pair<R: Rng + ?Sized>(sample: &PairedSample, cfg: &AugmentConfig, rng: &mut R) -> Result<PairedSample> {
    augment_pair_with_offset(sample, cfg, rng).map(|(s, _)| s)
}
