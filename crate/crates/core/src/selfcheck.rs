//! Built-in verification: gradient checks, the shape program, metric
//! oracles and loss unit values. Faults can be injected into the metric
//! under test to confirm a broken implementation is caught.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckConfig};
use crate::metrics::reference::{reference_pair, reference_set};
use crate::metrics::{l1, mse, psnr, ssim, SsimParams, PSNR_CAP_DB};
use crate::models::{build_discriminator, build_generator, DiscriminatorSpec, GeneratorSpec};
use crate::objectives::{discriminator_loss, generator_gan_loss, generator_total_loss, LossConfig};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

pub const PSNR_TOL_DB: f64 = 1e-6;
pub const SSIM_TOL: f64 = 1e-4;
pub const L1_TOL: f64 = 1e-12;
pub const CLOSED_FORM_TOL: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;
pub const LOSS_TOL: f64 = 1e-5;

/// Deliberate metric bugs for exercising the checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// PSNR with a natural instead of decimal logarithm.
    PsnrNaturalLog,
    /// SSIM with a flat instead of Gaussian window.
    SsimUniformWindow,
    /// L1 reported as mean squared error.
    L1Squared,
}

impl Fault {
    pub const ALL: [Fault; 3] = [Fault::PsnrNaturalLog, Fault::SsimUniformWindow, Fault::L1Squared];

    pub fn as_str(self) -> &'static str {
        match self {
            Fault::PsnrNaturalLog => "psnr-natural-log",
            Fault::SsimUniformWindow => "ssim-uniform-window",
            Fault::L1Squared => "l1-squared",
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Fault::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown fault `{s}` (expected psnr-natural-log, ssim-uniform-window or l1-squared)")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    /// The invariant being checked.
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SelfcheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn push_result(&mut self, name: &str, r: Result<(bool, String)>) {
        match r {
            Ok((ok, detail)) => self.push(name, ok, detail),
            Err(e) => self.push(name, false, format!("error: {e}")),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SelfcheckOptions {
    pub fault: Option<Fault>,
}

/// The metric implementations under test, with an optional injected fault.
struct MetricsUnderTest(Option<Fault>);

impl MetricsUnderTest {
    fn l1(&self, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
        match self.0 {
            Some(Fault::L1Squared) => mse(a, b),
            _ => l1(a, b),
        }
    }

    fn psnr(&self, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
        match self.0 {
            Some(Fault::PsnrNaturalLog) => {
                let m = mse(a, b)?;
                Ok(if m == 0.0 { PSNR_CAP_DB } else { 10.0 * (1.0 / m).ln() })
            }
            _ => psnr(a, b, 1.0),
        }
    }

    fn ssim(&self, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
        let p = match self.0 {
            Some(Fault::SsimUniformWindow) => SsimParams {
                sigma: 1e6,
                ..SsimParams::default()
            },
            _ => SsimParams::default(),
        };
        ssim(a, b, &p)
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> (bool, String) {
    let err = (got - want).abs();
    (err < tol, format!("{name} = {got:.8}, expected {want:.8}, |diff| {err:.2e} (tol {tol:.0e})"))
}

pub fn check_gradients(report: &mut SelfcheckReport) {
    match gradcheck::run(&GradCheckConfig::default()) {
        Ok(r) => {
            report.push(
                "gradients: generator objective matches central differences",
                r.generator_max_rel_error < GRAD_TOL,
                format!(
                    "max relative error {:.3e} at {} over {} parameters",
                    r.generator_max_rel_error, r.generator_worst_param, r.generator_params
                ),
            );
            report.push(
                "gradients: discriminator objective matches central differences",
                r.discriminator_max_rel_error < GRAD_TOL,
                format!(
                    "max relative error {:.3e} at {} over {} parameters",
                    r.discriminator_max_rel_error, r.discriminator_worst_param, r.discriminator_params
                ),
            );
        }
        Err(e) => report.push("gradients: finite-difference check ran", false, e.to_string()),
    }
}

/// Generators of depth 4, 6 and 8 on 16, 64 and 256 pixel inputs: valid
/// exactly when the side is a multiple of `2^depth`, and then shape
/// preserving with a `side / 2^depth` bottleneck.
pub fn check_shapes(report: &mut SelfcheckReport) {
    for depth in [4usize, 6, 8] {
        for size in [16usize, 64, 256] {
            let name = format!("shapes: depth {depth} generator on {size}x{size}");
            let r = (|| -> Result<(bool, String)> {
                let spec = GeneratorSpec {
                    depth,
                    base_filters: 2,
                    max_filters: 8,
                    ..GeneratorSpec::desk(1)
                };
                let g = build_generator::<f32, _>(spec, &mut stream(0, Purpose::GeneratorInit, 0))?;
                let valid = size % (1 << depth) == 0;
                let out = g.infer(&Tensor::zeros([1, 1, size, size]));
                Ok(match (valid, out) {
                    (true, Ok(y)) => {
                        let b = g.bottleneck_hw(size, size);
                        let ok = y.shape() == [1, 1, size, size] && b == (size >> depth, size >> depth);
                        (ok, format!("output {:?}, bottleneck {b:?}", y.shape()))
                    }
                    (true, Err(e)) => (false, format!("rejected a valid input: {e}")),
                    (false, Ok(y)) => (false, format!("accepted an invalid input, output {:?}", y.shape())),
                    (false, Err(_)) => (true, format!("rejected: {size} is not a multiple of {}", 1 << depth)),
                })
            })();
            report.push_result(&name, r);
        }
    }
    let spec = GeneratorSpec::full_scale();
    let enc = spec.encoder_channels();
    let dec = spec.decoder_input_channels();
    report.push(
        "shapes: reference generator channel schedule",
        enc == [64, 128, 256, 512, 512, 512, 512, 512] && dec == [512, 1024, 1024, 1024, 1024, 512, 256, 128],
        format!("encoder {enc:?}, decoder inputs {dec:?}"),
    );
    let r = (|| -> Result<(bool, String)> {
        let d = DiscriminatorSpec::full_scale(1);
        let small = DiscriminatorSpec {
            filter_schedule: vec![2, 4, 8, 16],
            ..d.clone()
        };
        let disc = build_discriminator::<f32, _>(small, &mut stream(0, Purpose::DiscriminatorInit, 0))?;
        let x = Tensor::zeros([1, 1, 256, 256]);
        let p = disc.infer(&x, &x)?;
        let ok = d.output_hw(256, 256) == Some((30, 30)) && p.shape() == [1, 1, 30, 30];
        Ok((ok, format!("patch map {:?}", p.shape())))
    })();
    report.push_result("shapes: discriminator patch map on 256x256 is 30x30", r);
}

pub fn check_metrics(report: &mut SelfcheckReport, fault: Option<Fault>) {
    let m = MetricsUnderTest(fault);
    let r = (|| -> Result<(bool, String)> {
        let set = reference_set()?;
        let (mut el, mut ep, mut es) = (0.0f64, 0.0f64, 0.0f64);
        for row in &set.pairs {
            let (a, b) = reference_pair(row.index);
            el = el.max((m.l1(&a, &b)? - row.l1).abs());
            ep = ep.max((m.psnr(&a, &b)? - row.psnr).abs());
            es = es.max((m.ssim(&a, &b)? - row.ssim).abs());
        }
        let ok = el < L1_TOL && ep < PSNR_TOL_DB && es < SSIM_TOL;
        Ok((
            ok,
            format!(
                "{} pairs vs {}: max |dL1| {el:.2e}, |dPSNR| {ep:.2e} dB, |dSSIM| {es:.2e}",
                set.pairs.len(),
                set.reference
            ),
        ))
    })();
    report.push_result("metric oracle: L1, PSNR and SSIM match the reference implementation", r);

    let zero = Tensor::<f64>::zeros([1, 1, 16, 16]);
    let half = Tensor::<f64>::full([1, 1, 16, 16], 0.5);
    report.push_result(
        "metric oracle: PSNR of MSE 0.25 is 6.0206 dB",
        m.psnr(&zero, &half).map(|v| close("psnr", v, 10.0 * 4f64.log10(), CLOSED_FORM_TOL)),
    );
    report.push_result(
        "metric oracle: PSNR of identical images is capped",
        m.psnr(&half, &half).map(|v| close("psnr", v, PSNR_CAP_DB, CLOSED_FORM_TOL)),
    );
    let a = Tensor::<f64>::full([1, 1, 16, 16], 0.2);
    let b = Tensor::<f64>::full([1, 1, 16, 16], 0.8);
    let want = (2.0 * 0.2 * 0.8 + 1e-4) / (0.2 * 0.2 + 0.8 * 0.8 + 1e-4);
    report.push_result(
        "metric oracle: SSIM of constant fields 0.2 and 0.8 is (0.32 + C1) / (0.68 + C1)",
        m.ssim(&a, &b).map(|v| close("ssim", v, want, CLOSED_FORM_TOL)),
    );
    report.push_result(
        "metric oracle: L1 of constant fields 0 and 0.5 is 0.5",
        m.l1(&zero, &half).map(|v| close("l1", v, 0.5, L1_TOL)),
    );
}

pub fn check_losses(report: &mut SelfcheckReport) {
    let half = Tensor::<f64>::full([2, 1, 6, 6], 0.5);
    report.push(
        "losses: discriminator loss on 0.5 maps is 2 ln 2",
        (discriminator_loss(&half, &half) - 2.0 * std::f64::consts::LN_2).abs() < LOSS_TOL,
        format!("{:.6}", discriminator_loss(&half, &half)),
    );
    report.push(
        "losses: generator GAN loss on a 0.5 map is ln 2",
        (generator_gan_loss(&half) - std::f64::consts::LN_2).abs() < LOSS_TOL,
        format!("{:.6}", generator_gan_loss(&half)),
    );
    let pred = Tensor::<f64>::from_fn([1, 1, 4, 4], |[_, _, h, w]| (h as f64 - w as f64) / 4.0);
    let target = Tensor::<f64>::zeros([1, 1, 4, 4]);
    let r = generator_total_loss(&half, &pred, &target, &LossConfig::default()).map(|l| {
        let ok = l.g_total == l.g_gan_loss + 100.0 * l.g_l1_loss;
        (ok, format!("g_total {} = {} + 100 * {}", l.g_total, l.g_gan_loss, l.g_l1_loss))
    });
    report.push_result("losses: g_total = g_gan + lambda * l1", r);
}

pub fn run_selfcheck(opts: &SelfcheckOptions) -> SelfcheckReport {
    let mut report = SelfcheckReport::default();
    check_gradients(&mut report);
    check_shapes(&mut report);
    check_metrics(&mut report, opts.fault);
    check_losses(&mut report);
    report
}
