//! Frozen scores from an independent implementation for 100 generated pairs.
//!
//! Pairs are drawn from a splitmix64 stream (mirrored by
//! `python/metric_reference.py`), so only the scores are stored.

use serde::Deserialize;

use crate::error::Result;
use crate::tensor::Tensor;

pub const REFERENCE_JSON: &str = include_str!("../../fixtures/metric_reference.json");

#[derive(Clone, Debug, Deserialize)]
pub struct ReferenceRow {
    pub index: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ReferenceSet {
    pub reference: String,
    pub pairs: Vec<ReferenceRow>,
}

pub fn reference_set() -> Result<ReferenceSet> {
    Ok(serde_json::from_str(REFERENCE_JSON)?)
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn uniform(&mut self) -> f64 {
        (self.next() >> 11) as f64 * 2f64.powi(-53)
    }
}

/// Pair `i` of the reference stream, values in `[0, 1]`, shape `(1, c, h, w)`.
pub fn reference_pair(i: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = SplitMix64(i);
    let h = 11 + (rng.next() % 22) as usize;
    let w = 11 + (rng.next() % 22) as usize;
    let c = if rng.next().is_multiple_of(2) { 1 } else { 3 };
    let alpha = rng.uniform();
    let n = c * h * w;
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let u = rng.uniform();
        let v = rng.uniform();
        a.push(u);
        b.push(alpha * u + (1.0 - alpha) * v);
    }
    let shape = [1, c, h, w];
    (
        Tensor::from_vec(shape, a).expect("shape matches"),
        Tensor::from_vec(shape, b).expect("shape matches"),
    )
}
