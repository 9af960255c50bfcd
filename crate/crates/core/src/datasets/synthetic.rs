//! Paired datasets whose union-domain ground truth is an involution.
//!
//! Pixel values are designed in `[0, 1]` and stored in `[-1, 1]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::ImageTensor;

use super::{PairedDataset, PairedSample, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    /// Bright textures `t` and their negatives `1 - t`.
    BiasedNegation,
    /// Textures `t` in `[0.55, 1]` and their squares.
    GammaSwap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    SmoothedNoise,
    Shapes,
}

impl SyntheticTask {
    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticTask::BiasedNegation => "biased_negation",
            SyntheticTask::GammaSwap => "gamma_swap",
        }
    }

    fn domain_names(self) -> (String, String) {
        match self {
            SyntheticTask::BiasedNegation => ("bright".into(), "negated".into()),
            SyntheticTask::GammaSwap => ("linear".into(), "squared".into()),
        }
    }

    /// The ideal direction-blind map on `[0, 1]` intensities of one image.
    /// A gamma_swap image is told apart by its darkest pixel: linear-domain
    /// minima lie in `[0.55, 0.7]`, their squares in `[0.3025, 0.49]`.
    pub fn ideal_map(self, image: &[f64]) -> Vec<f64> {
        match self {
            SyntheticTask::BiasedNegation => image.iter().map(|v| 1.0 - v).collect(),
            SyntheticTask::GammaSwap => {
                let darkest = image.iter().copied().fold(f64::INFINITY, f64::min);
                if darkest >= GAMMA_THRESHOLD {
                    image.iter().map(|v| v * v).collect()
                } else {
                    image.iter().map(|v| v.sqrt()).collect()
                }
            }
        }
    }
}

/// Darkest-pixel boundary between the gamma_swap domains.
const GAMMA_THRESHOLD: f64 = 0.52;

impl fmt::Display for SyntheticTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntheticTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biased_negation" => Ok(SyntheticTask::BiasedNegation),
            "gamma_swap" => Ok(SyntheticTask::GammaSwap),
            _ => Err(Error::Config(format!(
                "unknown task `{s}` (expected biased_negation or gamma_swap)"
            ))),
        }
    }
}

impl Texture {
    pub fn as_str(self) -> &'static str {
        match self {
            Texture::SmoothedNoise => "smoothed_noise",
            Texture::Shapes => "shapes",
        }
    }
}

impl fmt::Display for Texture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Texture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoothed_noise" => Ok(Texture::SmoothedNoise),
            "shapes" => Ok(Texture::Shapes),
            _ => Err(Error::Config(format!(
                "unknown texture `{s}` (expected smoothed_noise or shapes)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub task: SyntheticTask,
    pub image_size: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub texture: Texture,
    /// Depth of the generator the data is meant for; sets the minimum size.
    pub generator_depth: usize,
    pub split: Split,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("synthetic dataset needs n_samples > 0".into()));
        }
        if !self.image_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "image size {} is not a power of two",
                self.image_size
            )));
        }
        let min = 1usize
            .checked_shl(self.generator_depth as u32)
            .ok_or_else(|| Error::Config(format!("generator depth {} is too large", self.generator_depth)))?;
        if self.image_size < min {
            return Err(Error::Config(format!(
                "image size {} is too small for generator depth {}: need at least {min}",
                self.image_size, self.generator_depth
            )));
        }
        Ok(())
    }
}

fn gaussian_blur(img: &mut [f64], n: usize, sigma: f64) {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / total).collect();
    let reflect = |i: isize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = (-r..=r)
                .map(|d| kernel[(d + r) as usize] * img[y * n + reflect(x as isize + d)])
                .sum();
        }
    }
    for y in 0..n {
        for x in 0..n {
            img[y * n + x] = (-r..=r)
                .map(|d| kernel[(d + r) as usize] * tmp[reflect(y as isize + d) * n + x])
                .sum();
        }
    }
}

fn base_pattern<R: Rng + ?Sized>(texture: Texture, n: usize, rng: &mut R) -> Vec<f64> {
    match texture {
        Texture::SmoothedNoise => {
            let mut img: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
            let sigma = rng.random_range((n as f64 / 32.0).max(1.0)..=(n as f64 / 8.0).max(1.5));
            gaussian_blur(&mut img, n, sigma);
            img
        }
        Texture::Shapes => {
            let mut img = vec![rng.random_range(-1.0..1.0); n * n];
            let count = rng.random_range(3..=8);
            for _ in 0..count {
                let level: f64 = rng.random_range(-1.0..1.0);
                let cy = rng.random_range(0.0..n as f64);
                let cx = rng.random_range(0.0..n as f64);
                let ry = rng.random_range(n as f64 / 16.0..n as f64 / 4.0);
                let rx = rng.random_range(n as f64 / 16.0..n as f64 / 4.0);
                let disk: bool = rng.random();
                for y in 0..n {
                    for x in 0..n {
                        let dy = (y as f64 + 0.5 - cy) / ry;
                        let dx = (x as f64 + 0.5 - cx) / rx;
                        let inside = if disk {
                            dy * dy + dx * dx <= 1.0
                        } else {
                            dy.abs() <= 1.0 && dx.abs() <= 1.0
                        };
                        if inside {
                            img[y * n + x] = level;
                        }
                    }
                }
            }
            gaussian_blur(&mut img, n, 1.0);
            img
        }
    }
}

/// Zero mean, max absolute value 1 (or all zeros for a flat pattern).
fn center(p: &mut [f64]) {
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    p.iter_mut().for_each(|v| *v -= mean);
    let peak = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        p.iter_mut().for_each(|v| *v /= peak);
    }
}

/// Base texture `t` in `[0, 1]` for one sample of `task`.
fn base_texture<R: Rng + ?Sized>(task: SyntheticTask, texture: Texture, n: usize, rng: &mut R) -> Vec<f64> {
    let mut p = base_pattern(texture, n, rng);
    match task {
        SyntheticTask::BiasedNegation => {
            center(&mut p);
            let mean = rng.random_range(0.65..=0.9);
            let amp = rng.random_range(0.5..=1.0) * f64::min(mean, 1.0 - mean);
            p.iter().map(|v| mean + amp * v).collect()
        }
        SyntheticTask::GammaSwap => {
            let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let low = rng.random_range(0.55..=0.7);
            let high = rng.random_range(0.85..=1.0);
            let span = if hi > lo { hi - lo } else { 1.0 };
            p.iter().map(|v| low + (high - low) * (v - lo) / span).collect()
        }
    }
}

fn to_tensor(n: usize, t: impl Iterator<Item = f64>) -> ImageTensor {
    ImageTensor::from_vec([1, 1, n, n], t.map(|v| (2.0 * v - 1.0) as f32).collect()).expect("n*n values")
}

/// Deterministic single-channel paired dataset for `spec`.
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<PairedDataset> {
    spec.validate()?;
    let n = spec.image_size;
    let width = spec.n_samples.saturating_sub(1).to_string().len().max(5);
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let index = ((spec.split.code() as u64) << 40) | i as u64;
        let mut rng = stream(spec.seed, Purpose::Synthetic, index);
        let t = base_texture(spec.task, spec.texture, n, &mut rng);
        let x = to_tensor(n, t.iter().copied());
        let y = match spec.task {
            SyntheticTask::BiasedNegation => x.map(|v| -v),
            SyntheticTask::GammaSwap => to_tensor(n, t.iter().map(|v| v * v)),
        };
        samples.push(PairedSample {
            id: format!("{:0width$}", i),
            x,
            y,
        });
    }
    PairedDataset::new(samples, spec.split, spec.task.domain_names())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(task: SyntheticTask, texture: Texture) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            task,
            image_size: 32,
            n_samples: 12,
            seed: 7,
            texture,
            generator_depth: 5,
            split: Split::Train,
        }
    }

    fn unit(img: &ImageTensor) -> Vec<f64> {
        img.data().iter().map(|&v| (f64::from(v) + 1.0) / 2.0).collect()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn negation_pairs_sum_to_one() {
        for texture in [Texture::SmoothedNoise, Texture::Shapes] {
            let ds = generate_synthetic(&spec(SyntheticTask::BiasedNegation, texture)).unwrap();
            for s in &ds.samples {
                let (x, y) = (unit(&s.x), unit(&s.y));
                assert!((mean(&x) + mean(&y) - 1.0).abs() < 1e-9);
                let m = mean(&x);
                assert!((0.65 - 1e-6..=0.9 + 1e-6).contains(&m), "{m}");
                assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn gamma_pairs_are_squares() {
        for texture in [Texture::SmoothedNoise, Texture::Shapes] {
            let ds = generate_synthetic(&spec(SyntheticTask::GammaSwap, texture)).unwrap();
            for s in &ds.samples {
                for (x, y) in unit(&s.x).iter().zip(unit(&s.y)) {
                    assert!((y.sqrt() - x).abs() < 1e-6);
                    assert!((0.55 - 1e-6..=1.0 + 1e-6).contains(x));
                }
            }
        }
    }

    #[test]
    fn ideal_maps_are_involutions_on_the_data() {
        for task in [SyntheticTask::BiasedNegation, SyntheticTask::GammaSwap] {
            let ds = generate_synthetic(&spec(task, Texture::SmoothedNoise)).unwrap();
            for s in &ds.samples {
                let (x, y) = (unit(&s.x), unit(&s.y));
                let fx = task.ideal_map(&x);
                for (a, b) in fx.iter().zip(&y) {
                    assert!((a - b).abs() < 1e-6);
                }
                for (a, b) in task.ideal_map(&fx).iter().zip(&x) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn negation_domains_are_separable() {
        let ds = generate_synthetic(&SyntheticTaskSpec {
            n_samples: 60,
            ..spec(SyntheticTask::BiasedNegation, Texture::Shapes)
        })
        .unwrap();
        let min_x = ds.samples.iter().map(|s| mean(&unit(&s.x))).fold(f64::INFINITY, f64::min);
        let max_y = ds.samples.iter().map(|s| mean(&unit(&s.y))).fold(0.0, f64::max);
        assert!(min_x > max_y);
    }

    #[test]
    fn deterministic_and_split_dependent() {
        let s = spec(SyntheticTask::BiasedNegation, Texture::SmoothedNoise);
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a.samples, b.samples);
        let v = generate_synthetic(&SyntheticTaskSpec { split: Split::Val, ..s }).unwrap();
        assert_ne!(a.samples[0].x, v.samples[0].x);
    }

    #[test]
    fn rejects_sizes_too_small_for_depth() {
        let err = generate_synthetic(&SyntheticTaskSpec {
            image_size: 32,
            generator_depth: 6,
            ..spec(SyntheticTask::GammaSwap, Texture::Shapes)
        })
        .unwrap_err();
        assert!(err.to_string().contains("at least 64"), "{err}");
        assert!(generate_synthetic(&SyntheticTaskSpec {
            image_size: 48,
            ..spec(SyntheticTask::GammaSwap, Texture::Shapes)
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticTaskSpec {
            n_samples: 0,
            ..spec(SyntheticTask::GammaSwap, Texture::Shapes)
        })
        .is_err());
    }
}
