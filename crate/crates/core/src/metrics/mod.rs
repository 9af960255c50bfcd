//! Image quality metrics and evaluation reports.
//!
//! Model tensors live in `[-1, 1]`; every metric here is computed on images
//! mapped to `[0, 1]` by `(v + 1) / 2`, with a data range of 1.

pub mod reference;
mod report;
mod translator;

pub use report::{Aggregate, MetricAggregates, MetricParams, MetricReport, ReportMetadata, SampleMetrics};
pub use translator::{AnalyticInvolution, ConstantOutput, FnTranslator, Identity, LabelLookup, Translator};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{PairedDataset, PairedSample};
use crate::error::{Error, Result};
use crate::models::Direction;
use crate::tensor::{ImageTensor, Scalar, Tensor};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Map a model tensor from `[-1, 1]` to `[0, 1]`.
pub fn to_unit(t: &ImageTensor) -> Tensor<f64> {
    let data = t.data().iter().map(|&v| (f64::from(v) + 1.0) / 2.0).collect();
    Tensor::from_vec(t.shape(), data).expect("shape preserved")
}

fn check_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    if a.is_empty() {
        return Err(Error::Metric("metric of an empty image".into()));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(&p, &q)| (p.to_f64() - q.to_f64()).abs()).sum();
    Ok(s / a.len() as f64)
}

/// Mean squared difference.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| {
            let d = p.to_f64() - q.to_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `10 log10(range^2 / MSE)` in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::Metric(format!("data range must be positive, got {data_range}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / m).log10()).min(PSNR_CAP_DB))
}

/// Parameters of the windowed SSIM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Odd side length of the Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Metric(format!("SSIM window must be odd, got {}", self.window)));
        }
        if !(self.sigma > 0.0 && self.data_range > 0.0 && self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::Metric("SSIM sigma, constants and data range must be positive".into()));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let w: Vec<f64> = (0..self.window)
            .map(|i| {
                let x = i as f64 - r;
                (-0.5 * x * x / (self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

/// Separable valid-mode filter of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * wo];
    for i in 0..h {
        let src = &plane[i * w..(i + 1) * w];
        for j in 0..wo {
            rows[i * wo + j] = k.iter().zip(&src[j..j + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            out[i * wo + j] = k.iter().enumerate().map(|(t, a)| a * rows[(i + t) * wo + j]).sum();
        }
    }
    out
}

/// Mean SSIM map value of one plane pair.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, p: &SsimParams, k: &[f64]) -> f64 {
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mx = filter_valid(a, h, w, k);
    let my = filter_valid(b, h, w, k);
    let mxx = filter_valid(&prod(|x, _| x * x), h, w, k);
    let myy = filter_valid(&prod(|_, y| y * y), h, w, k);
    let mxy = filter_valid(&prod(|x, y| x * y), h, w, k);
    let (c1, c2) = (p.c1(), p.c2());
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let vxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    total / mx.len() as f64
}

/// Gaussian-window SSIM with population covariances over valid windows,
/// averaged over channels and samples.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, p: &SsimParams) -> Result<f64> {
    check_pair(a, b)?;
    p.validate()?;
    let [n, c, h, w] = a.shape();
    if h < p.window || w < p.window {
        return Err(Error::Metric(format!(
            "image {h}x{w} is smaller than the {0}x{0} SSIM window",
            p.window
        )));
    }
    let k = p.kernel();
    let plane = h * w;
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    for idx in 0..n * c {
        let pa: Vec<f64> = ad[idx * plane..(idx + 1) * plane].iter().map(|v| v.to_f64()).collect();
        let pb: Vec<f64> = bd[idx * plane..(idx + 1) * plane].iter().map(|v| v.to_f64()).collect();
        total += ssim_plane(&pa, &pb, h, w, p, &k);
    }
    Ok(total / (n * c) as f64)
}

/// Metric selector for sensitivity analysis and summaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L1,
    Psnr,
    Ssim,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::L1, Metric::Psnr, Metric::Ssim];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
        }
    }

    pub fn of(self, m: &SampleMetrics) -> f64 {
        match self {
            Metric::L1 => m.l1,
            Metric::Psnr => m.psnr,
            Metric::Ssim => m.ssim,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            other => Err(Error::Config(format!("unknown metric `{other}` (expected l1, psnr or ssim)"))),
        }
    }
}

/// All three metrics of a model-space output against a model-space target.
pub fn score(id: &str, output: &ImageTensor, target: &ImageTensor, params: &MetricParams) -> Result<SampleMetrics> {
    let (o, t) = (to_unit(output), to_unit(target));
    Ok(SampleMetrics {
        id: id.to_string(),
        l1: l1(&o, &t)?,
        psnr: psnr(&o, &t, params.data_range)?,
        ssim: ssim(&o, &t, &params.ssim())?,
    })
}

/// Input and label of a sample for a translation direction.
pub fn direction_pair(s: &PairedSample, direction: Direction) -> (&ImageTensor, &ImageTensor) {
    match direction {
        Direction::A => (&s.x, &s.y),
        Direction::B => (&s.y, &s.x),
    }
}

/// Translate every input of `dataset` and score it against its label.
/// `on_sample` sees each sample with its output and scores, in dataset order.
pub fn evaluate_with(
    model: &dyn Translator,
    dataset: &PairedDataset,
    direction: Direction,
    metadata: ReportMetadata,
    on_sample: &mut dyn FnMut(&PairedSample, &ImageTensor, &SampleMetrics) -> Result<()>,
) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let mut rows = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let (input, label) = direction_pair(s, direction);
        let out = model.translate(input)?;
        let row = score(&s.id, &out, label, &metadata.metrics)?;
        on_sample(s, &out, &row)?;
        rows.push(row);
    }
    Ok(MetricReport::from_rows(direction, rows, metadata))
}

pub fn evaluate(
    model: &dyn Translator,
    dataset: &PairedDataset,
    direction: Direction,
    metadata: ReportMetadata,
) -> Result<MetricReport> {
    evaluate_with(model, dataset, direction, metadata, &mut |_, _, _| Ok(()))
}

/// Mean over samples of `(L1(g(g(x)), x) + L1(g(g(y)), y)) / 2` in `[0, 1]`
/// space. Zero for an exact involution.
pub fn self_inverse_score(model: &dyn Translator, dataset: &PairedDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot score an empty dataset".into()));
    }
    let mut total = 0.0;
    for s in &dataset.samples {
        for v in [&s.x, &s.y] {
            let back = model.translate(&model.translate(v)?)?;
            total += l1(&to_unit(&back), &to_unit(v))?;
        }
    }
    Ok(total / (2 * dataset.len()) as f64)
}

#[cfg(test)]
mod tests;
