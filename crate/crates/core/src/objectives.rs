//! Conditional-GAN and L1 objectives.
//!
//! The probability-space functions clamp inputs to `[EPS, 1 - EPS]` before
//! taking logs. Training uses the fused logit-space forms, which agree with the
//! clamped definitions wherever the clamp is inactive and stay finite where it
//! is not.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ProbabilityMap;
use crate::tensor::{Scalar, Tensor};

pub const EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanMode {
    #[default]
    Bce,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorGanForm {
    /// Minimize `-log D(x, G(x))`.
    #[default]
    NonSaturating,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the L1 term.
    pub lambda_l1: f64,
    #[serde(default)]
    pub gan_mode: GanMode,
    #[serde(default)]
    pub generator_gan_form: GeneratorGanForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_l1: 100.0,
            gan_mode: GanMode::Bce,
            generator_gan_form: GeneratorGanForm::NonSaturating,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::Config(format!("lambda_l1 must be finite and >= 0, got {}", self.lambda_l1)));
        }
        Ok(())
    }
}

/// Loss values of one optimization step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub d_loss: f64,
    pub g_gan_loss: f64,
    pub g_l1_loss: f64,
    /// Always `g_gan_loss + lambda_l1 * g_l1_loss`.
    pub g_total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.d_loss.is_finite() && self.g_gan_loss.is_finite() && self.g_l1_loss.is_finite() && self.g_total.is_finite()
    }
}

fn mean_of<T: Scalar>(t: &Tensor<T>, f: impl Fn(f64) -> f64) -> f64 {
    t.data().iter().map(|v| f(v.to_f64())).sum::<f64>() / t.len() as f64
}

#[inline]
fn clamp_p(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Mean absolute difference over all elements.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    pred.expect_shape(target.shape())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
        .sum();
    Ok(s / pred.len() as f64)
}

/// Gradient of [`l1_loss`] with respect to `pred` (zero where equal).
pub fn l1_loss_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let n = T::of(1.0 / pred.len().max(1) as f64);
    pred.zip_map(target, |a, b| {
        if a > b {
            n
        } else if a < b {
            -n
        } else {
            T::ZERO
        }
    })
}

/// `-mean(log d_real) - mean(log(1 - d_fake))`.
pub fn discriminator_loss<T: Scalar>(d_real: &ProbabilityMap<T>, d_fake: &ProbabilityMap<T>) -> f64 {
    -mean_of(d_real, |p| clamp_p(p).ln()) - mean_of(d_fake, |p| (1.0 - clamp_p(p)).ln())
}

/// Gradients of [`discriminator_loss`] with respect to both maps.
pub fn discriminator_loss_grad<T: Scalar>(
    d_real: &ProbabilityMap<T>,
    d_fake: &ProbabilityMap<T>,
) -> (Tensor<T>, Tensor<T>) {
    let nr = d_real.len() as f64;
    let nf = d_fake.len() as f64;
    let inside = |p: f64| (EPS..=1.0 - EPS).contains(&p);
    (
        d_real.map(|p| {
            let p = p.to_f64();
            T::of(if inside(p) { -1.0 / (nr * p) } else { 0.0 })
        }),
        d_fake.map(|p| {
            let p = p.to_f64();
            T::of(if inside(p) { 1.0 / (nf * (1.0 - p)) } else { 0.0 })
        }),
    )
}

/// Non-saturating generator adversarial loss: `-mean(log d_fake)`.
pub fn generator_gan_loss<T: Scalar>(d_fake: &ProbabilityMap<T>) -> f64 {
    -mean_of(d_fake, |p| clamp_p(p).ln())
}

pub fn generator_gan_loss_grad<T: Scalar>(d_fake: &ProbabilityMap<T>) -> Tensor<T> {
    let n = d_fake.len() as f64;
    d_fake.map(|p| {
        let p = p.to_f64();
        T::of(if (EPS..=1.0 - EPS).contains(&p) { -1.0 / (n * p) } else { 0.0 })
    })
}

/// Compose the generator objective. `d_loss` is left at zero; the training
/// step fills it in.
pub fn generator_total_loss<T: Scalar>(
    d_fake: &ProbabilityMap<T>,
    pred: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let g_gan_loss = generator_gan_loss(d_fake);
    let g_l1_loss = l1_loss(pred, target)?;
    Ok(LossBreakdown {
        d_loss: 0.0,
        g_gan_loss,
        g_l1_loss,
        g_total: g_gan_loss + cfg.lambda_l1 * g_l1_loss,
    })
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy against a constant label, computed from pre-sigmoid
/// scores. Returns the mean loss and its gradient with respect to the scores.
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, real: bool) -> (f64, Tensor<T>) {
    let n = logits.len() as f64;
    let value = if real {
        mean_of(logits, |z| softplus(-z))
    } else {
        mean_of(logits, softplus)
    };
    let grad = logits.map(|z| {
        let s = sigmoid(z.to_f64());
        T::of(if real { (s - 1.0) / n } else { s / n })
    });
    (value, grad)
}
