//! Central finite-difference verification of the hand-written backward passes
//! on a tiny double-precision configuration.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::models::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::nn::{ForwardMode, Module};
use crate::objectives::{bce_with_logits, l1_loss, l1_loss_grad, LossConfig};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Parameters whose analytic and numeric gradients are both below this are
/// compared absolutely; see [`relative_error`].
pub const GRAD_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub generator_params: usize,
    pub discriminator_params: usize,
    /// Worst relative error of d g_total / d theta_G.
    pub generator_max_rel_error: f64,
    pub generator_worst_param: String,
    /// Worst relative error of d d_loss / d theta_D.
    pub discriminator_max_rel_error: f64,
    pub discriminator_worst_param: String,
}

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub struct GradCheckConfig {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub batch: usize,
    pub size: usize,
    pub step: f64,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            generator: GeneratorSpec {
                in_channels: 1,
                out_channels: 1,
                depth: 2,
                base_filters: 4,
                max_filters: 8,
                dropout_p: 0.5,
            },
            discriminator: DiscriminatorSpec {
                in_channels: 2,
                filter_schedule: vec![4, 8],
            },
            batch: 2,
            size: 8,
            step: 1e-5,
            loss: LossConfig::default(),
            seed: 11,
        }
    }
}

const PROBE: ForwardMode = ForwardMode {
    batch_stats: true,
    dropout: false,
    record: false,
};

fn g_total(g: &mut Generator<f64>, d: &mut Discriminator<f64>, x: &Tensor<f64>, y: &Tensor<f64>, lambda: f64) -> Result<f64> {
    let mut rng = stream(0, Purpose::Dropout, 0);
    let fake = g.forward(x, PROBE, &mut rng)?;
    let logits = d.forward_logits(x, &fake, PROBE)?;
    Ok(bce_with_logits(&logits, true).0 + lambda * l1_loss(&fake, y)?)
}

fn d_loss(g: &mut Generator<f64>, d: &mut Discriminator<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
    let mut rng = stream(0, Purpose::Dropout, 0);
    let fake = g.forward(x, PROBE, &mut rng)?;
    let real = d.forward_logits(x, y, PROBE)?;
    let fake_l = d.forward_logits(x, &fake, PROBE)?;
    Ok(bce_with_logits(&real, true).0 + bce_with_logits(&fake_l, false).0)
}

fn analytic_generator(
    g: &mut Generator<f64>,
    d: &mut Discriminator<f64>,
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    lambda: f64,
) -> Result<()> {
    let mut rng = stream(0, Purpose::Dropout, 0);
    g.zero_grad();
    d.zero_grad();
    let fake = g.forward(x, ForwardMode::TRAIN_DETERMINISTIC, &mut rng)?;
    let logits = d.forward_logits(x, &fake, ForwardMode::TRAIN_DETERMINISTIC)?;
    let (_, dlogits) = bce_with_logits(&logits, true);
    let mut dfake = d.backward(&dlogits, true)?.expect("target gradient requested");
    let l1g = l1_loss_grad(&fake, y)?.map(|v| v * lambda);
    dfake.add_assign(&l1g);
    g.backward(&dfake)
}

fn analytic_discriminator(g: &mut Generator<f64>, d: &mut Discriminator<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> Result<()> {
    let mut rng = stream(0, Purpose::Dropout, 0);
    d.zero_grad();
    let fake = g.forward(x, PROBE, &mut rng)?;
    let real = d.forward_logits(x, y, ForwardMode::TRAIN_DETERMINISTIC)?;
    d.backward(&bce_with_logits(&real, true).1, false)?;
    let fl = d.forward_logits(x, &fake, ForwardMode::TRAIN_DETERMINISTIC)?;
    d.backward(&bce_with_logits(&fl, false).1, false)?;
    Ok(())
}

/// Compare analytic parameter gradients of the generator objective and the
/// discriminator objective against central differences.
pub fn run(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut g: Generator<f64> = Generator::new(cfg.generator.clone(), &mut stream(cfg.seed, Purpose::GeneratorInit, 0))?;
    let mut d: Discriminator<f64> =
        Discriminator::new(cfg.discriminator.clone(), &mut stream(cfg.seed, Purpose::DiscriminatorInit, 0))?;
    // Break the symmetric initialization a little so every path carries signal.
    let mut rng = stream(cfg.seed, Purpose::Synthetic, 0);
    for p in g.params_mut().into_iter().chain(d.params_mut()) {
        for v in p.value.iter_mut() {
            *v += rng.random_range(-0.15..0.15);
        }
    }
    let shape = [cfg.batch, cfg.generator.in_channels, cfg.size, cfg.size];
    let x = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let y = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let lambda = cfg.loss.lambda_l1;
    let h = cfg.step;

    analytic_generator(&mut g, &mut d, &x, &y, lambda)?;
    let g_grads: Vec<(String, Vec<f64>)> = g.params().iter().map(|p| (p.name.clone(), p.grad.clone())).collect();
    let mut g_worst = (0.0f64, String::new());
    for (pi, (name, grads)) in g_grads.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = g.params()[pi].value[i];
            g.params_mut()[pi].value[i] = orig + h;
            let fp = g_total(&mut g, &mut d, &x, &y, lambda)?;
            g.params_mut()[pi].value[i] = orig - h;
            let fm = g_total(&mut g, &mut d, &x, &y, lambda)?;
            g.params_mut()[pi].value[i] = orig;
            let e = relative_error(a, (fp - fm) / (2.0 * h));
            if e > g_worst.0 {
                g_worst = (e, format!("{name}[{i}]"));
            }
        }
    }

    analytic_discriminator(&mut g, &mut d, &x, &y)?;
    let d_grads: Vec<(String, Vec<f64>)> = d.params().iter().map(|p| (p.name.clone(), p.grad.clone())).collect();
    let mut d_worst = (0.0f64, String::new());
    for (pi, (name, grads)) in d_grads.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = d.params()[pi].value[i];
            d.params_mut()[pi].value[i] = orig + h;
            let fp = d_loss(&mut g, &mut d, &x, &y)?;
            d.params_mut()[pi].value[i] = orig - h;
            let fm = d_loss(&mut g, &mut d, &x, &y)?;
            d.params_mut()[pi].value[i] = orig;
            let e = relative_error(a, (fp - fm) / (2.0 * h));
            if e > d_worst.0 {
                d_worst = (e, format!("{name}[{i}]"));
            }
        }
    }

    Ok(GradCheckReport {
        generator_params: g.parameter_count(),
        discriminator_params: d.parameter_count(),
        generator_max_rel_error: g_worst.0,
        generator_worst_param: g_worst.1,
        discriminator_max_rel_error: d_worst.0,
        discriminator_worst_param: d_worst.1,
    })
}
