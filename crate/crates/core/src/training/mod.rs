//! Alternating bidirectional training and the single-direction baseline.
//!
//! Every optimization step has two phases: a discriminator update on the real
//! pair `(input, label)` against the detached fake `(input, G(input))`, then a
//! generator update on the adversarial plus weighted L1 objective. In
//! `one2one` mode the step direction alternates: A feeds `(x, y)`, B feeds
//! `(y, x)` to the same generator and the same discriminator.
//!
//! All randomness is derived from `(seed, step)` or `(seed, epoch)`, so the
//! run is a pure function of its configuration and resuming from a checkpoint
//! continues bit-identically.

mod adam;
mod log;

pub use adam::Adam;
pub use log::{LossLog, LOSS_LOG_HEADER};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{augment_pair, batch_indices, stack_samples, AugmentConfig, PairedDataset, PairedSample};
use crate::error::{Error, Result};
use crate::models::{
    export_state, import_state, load_checkpoint, save_checkpoint, Checkpoint, Direction, Discriminator,
    DiscriminatorSpec, Generator, GeneratorSpec, OptimizerState, RngState, TrainMode, FORMAT_VERSION,
};
use crate::nn::{ForwardMode, Module};
use crate::objectives::{bce_with_logits, l1_loss, l1_loss_grad, LossBreakdown, LossConfig};
use crate::rng::{stream, Purpose};
use crate::tensor::ImageTensor;

/// How one2one steps are laid out over batches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternation {
    /// Direction A then direction B on each batch.
    #[default]
    SameBatch,
    /// Two shuffled passes per epoch; consecutive steps (and so consecutive
    /// batches) alternate direction.
    Interleaved,
}

impl Alternation {
    pub fn as_str(self) -> &'static str {
        match self {
            Alternation::SameBatch => "same_batch",
            Alternation::Interleaved => "interleaved",
        }
    }
}

impl fmt::Display for Alternation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Alternation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same_batch" => Ok(Alternation::SameBatch),
            "interleaved" => Ok(Alternation::Interleaved),
            _ => Err(Error::Config(format!(
                "unknown alternation `{s}` (expected same_batch or interleaved)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    /// Write an intermediate checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub alternation: Alternation,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl TrainConfig {
    /// Depth-6 generator, 32-base discriminator, 72/64 jitter.
    pub fn desk(mode: TrainMode, channels: usize) -> Self {
        TrainConfig {
            mode,
            epochs: 40,
            batch_size: 8,
            lr: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            seed: 0,
            loss: LossConfig::default(),
            augment: AugmentConfig::desk(),
            checkpoint_every: 0,
            log_every: 10,
            alternation: Alternation::SameBatch,
            generator: GeneratorSpec::desk(channels),
            discriminator: DiscriminatorSpec::scaled(channels, 32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "epochs and batch_size must be at least 1, got {} and {}",
                self.epochs, self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        self.loss.validate()?;
        self.augment.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.in_channels != self.generator.out_channels {
            return Err(Error::Config(format!(
                "generator must map images to images of the same channel count, got {} -> {}",
                self.generator.in_channels, self.generator.out_channels
            )));
        }
        if self.discriminator.in_channels != 2 * self.generator.in_channels {
            return Err(Error::Config(format!(
                "discriminator input must be a pair of {}-channel images ({} channels), got {}",
                self.generator.in_channels,
                2 * self.generator.in_channels,
                self.discriminator.in_channels
            )));
        }
        let c = self.augment.crop_size;
        self.generator.check_input([1, self.generator.in_channels, c, c])?;
        if self.discriminator.output_hw(c, c).is_none() {
            return Err(Error::Config(format!("crop size {c} is too small for the discriminator")));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// Optimization steps per epoch: one per batch, doubled for one2one.
    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        let nb = self.batches_per_epoch(n) as u64;
        match self.mode {
            TrainMode::One2One => 2 * nb,
            _ => nb,
        }
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        self.epochs as u64 * self.steps_per_epoch(n)
    }

    /// Direction of the very first step.
    pub fn initial_direction(&self) -> Direction {
        match self.mode {
            TrainMode::Pix2PixB => Direction::B,
            _ => Direction::A,
        }
    }
}

/// Where a (0-based) step falls in the epoch structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepPlan {
    pub epoch: u64,
    /// Shuffle pass within the epoch (always 0 except for interleaved).
    pub pass: u64,
    pub batch: usize,
    pub direction: Direction,
}

pub fn step_plan(cfg: &TrainConfig, n: usize, step: u64) -> StepPlan {
    let nb = cfg.batches_per_epoch(n) as u64;
    let spe = cfg.steps_per_epoch(n);
    let epoch = step / spe;
    let r = step % spe;
    let parity = |k: u64| if k.is_multiple_of(2) { Direction::A } else { Direction::B };
    match (cfg.mode, cfg.alternation) {
        (TrainMode::One2One, Alternation::SameBatch) => StepPlan {
            epoch,
            pass: 0,
            batch: (r / 2) as usize,
            direction: parity(r),
        },
        (TrainMode::One2One, Alternation::Interleaved) => StepPlan {
            epoch,
            pass: r / nb,
            batch: (r % nb) as usize,
            direction: parity(step),
        },
        _ => StepPlan {
            epoch,
            pass: 0,
            batch: r as usize,
            direction: cfg.initial_direction(),
        },
    }
}

/// Instrumentation of what the generator and discriminator have consumed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TrainCounters {
    pub generator_updates: u64,
    pub discriminator_updates: u64,
    /// `(input, label)` pairs seen by generator updates.
    pub pairs_consumed: u64,
    pub direction_a_steps: u64,
    pub direction_b_steps: u64,
}

pub struct TrainState {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub mode: TrainMode,
    /// Completed optimization steps.
    pub step: u64,
    pub next_direction: Direction,
    pub seed: u64,
    pub counters: TrainCounters,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = Generator::new(cfg.generator.clone(), &mut stream(cfg.seed, Purpose::GeneratorInit, 0))?;
        let discriminator =
            Discriminator::new(cfg.discriminator.clone(), &mut stream(cfg.seed, Purpose::DiscriminatorInit, 0))?;
        let g_opt = Adam::new(&generator, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
        let d_opt = Adam::new(&discriminator, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
        Ok(TrainState {
            generator,
            discriminator,
            g_opt,
            d_opt,
            mode: cfg.mode,
            step: 0,
            next_direction: cfg.initial_direction(),
            seed: cfg.seed,
            counters: TrainCounters::default(),
        })
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Result<Checkpoint> {
        let mut tensors = export_state(&self.generator, "g");
        tensors.extend(export_state(&self.discriminator, "d"));
        tensors.extend(self.g_opt.export(&self.generator, "opt.g"));
        tensors.extend(self.d_opt.export(&self.discriminator, "opt.d"));
        Ok(Checkpoint {
            format_version: FORMAT_VERSION,
            mode: self.mode,
            generator_spec: self.generator.spec().clone(),
            discriminator_spec: Some(self.discriminator.spec().clone()),
            step: self.step,
            next_direction: self.next_direction,
            rng_state: RngState { seed: self.seed },
            optimizer: Some(OptimizerState {
                generator_steps: self.g_opt.steps,
                discriminator_steps: self.d_opt.steps,
            }),
            config: Some(serde_json::to_value(cfg)?),
            tensors,
        })
    }

    /// Rebuild the full training state. Fails if the checkpoint lacks the
    /// discriminator, the optimizer moments or the run configuration.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, TrainConfig)> {
        let opt = ckpt.optimizer.as_ref().filter(|_| ckpt.has_optimizer_state()).ok_or_else(|| {
            Error::CheckpointCorrupt("checkpoint has no optimizer state; it can be used for inference only".into())
        })?;
        let cfg: TrainConfig = serde_json::from_value(
            ckpt.config
                .clone()
                .ok_or_else(|| Error::CheckpointCorrupt("checkpoint has no training configuration".into()))?,
        )?;
        if cfg.generator != ckpt.generator_spec || Some(&cfg.discriminator) != ckpt.discriminator_spec.as_ref() {
            return Err(Error::CheckpointCorrupt(
                "stored configuration disagrees with the stored model specs".into(),
            ));
        }
        let mut state = TrainState::new(&cfg)?;
        import_state(&mut state.generator, "g", ckpt)?;
        import_state(&mut state.discriminator, "d", ckpt)?;
        state.g_opt.import(&state.generator, "opt.g", ckpt, opt.generator_steps)?;
        state.d_opt.import(&state.discriminator, "opt.d", ckpt, opt.discriminator_steps)?;
        state.step = ckpt.step;
        state.next_direction = ckpt.next_direction;
        state.seed = ckpt.rng_state.seed;
        Ok((state, cfg))
    }
}

/// Generator weights only, for inference.
pub fn generator_from_checkpoint(ckpt: &Checkpoint) -> Result<Generator<f32>> {
    let mut g = Generator::new(
        ckpt.generator_spec.clone(),
        &mut stream(ckpt.rng_state.seed, Purpose::GeneratorInit, 0),
    )?;
    import_state(&mut g, "g", ckpt)?;
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    /// 1-based index of the step just completed.
    pub step: u64,
    pub direction: Direction,
    pub losses: LossBreakdown,
}

fn non_finite(step: u64, d_loss: f64, g_gan: f64, g_l1: f64) -> Error {
    Error::NonFinite {
        step,
        d_loss,
        g_gan,
        g_l1,
    }
}

/// Phase 1: one discriminator update on `(input, label)` against the
/// detached `(input, fake)`. Returns the discriminator loss.
pub fn discriminator_phase(
    state: &mut TrainState,
    input: &ImageTensor,
    label: &ImageTensor,
    fake: &ImageTensor,
) -> Result<f64> {
    let d = &mut state.discriminator;
    d.zero_grad();
    let real_logits = d.forward_logits(input, label, ForwardMode::TRAIN)?;
    let (d_real, g_real) = bce_with_logits(&real_logits, true);
    d.backward(&g_real, false)?;
    let fake_logits = d.forward_logits(input, fake, ForwardMode::TRAIN)?;
    let (d_fake, g_fake) = bce_with_logits(&fake_logits, false);
    d.backward(&g_fake, false)?;
    let d_loss = d_real + d_fake;
    if !d_loss.is_finite() {
        return Err(non_finite(state.step + 1, d_loss, f64::NAN, f64::NAN));
    }
    state.d_opt.step(d);
    state.counters.discriminator_updates += 1;
    Ok(d_loss)
}

/// Phase 2: one generator update on the adversarial plus weighted L1 loss of
/// the `fake` produced by the last recorded generator forward pass. The
/// discriminator's weights are left untouched. Returns `(g_gan, g_l1)`.
pub fn generator_phase(
    state: &mut TrainState,
    input: &ImageTensor,
    label: &ImageTensor,
    fake: &ImageTensor,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let d = &mut state.discriminator;
    let logits = d.forward_logits(input, fake, ForwardMode::TRAIN)?;
    let (g_gan, g_logits) = bce_with_logits(&logits, true);
    let g_l1 = l1_loss(fake, label)?;
    if !(g_gan.is_finite() && g_l1.is_finite()) {
        return Err(non_finite(state.step + 1, f64::NAN, g_gan, g_l1));
    }
    let mut dfake = d.backward_target(&g_logits)?;
    d.zero_grad();
    let lambda = cfg.loss.lambda_l1 as f32;
    dfake.add_assign(&l1_loss_grad(fake, label)?.map(|v| v * lambda));
    // Gradients are zero here: nothing since the last optimizer step (which
    // clears them) has backpropagated into the generator.
    state.generator.backward(&dfake)?;
    state.g_opt.step(&mut state.generator);
    state.counters.generator_updates += 1;
    state.counters.pairs_consumed += input.batch() as u64;
    Ok((g_gan, g_l1))
}

/// One discriminator update followed by one generator update on `(x, y)` in
/// the state's next direction. Flips the direction in one2one mode.
pub fn train_step(state: &mut TrainState, x: &ImageTensor, y: &ImageTensor, cfg: &TrainConfig) -> Result<StepRecord> {
    let direction = state.next_direction;
    let (input, label) = match direction {
        Direction::A => (x, y),
        Direction::B => (y, x),
    };
    let mut dropout_rng = stream(state.seed, Purpose::Dropout, state.step);
    let fake = state.generator.forward(input, ForwardMode::TRAIN, &mut dropout_rng)?;
    let d_loss = discriminator_phase(state, input, label, &fake)?;
    let (g_gan, g_l1) = generator_phase(state, input, label, &fake, cfg).map_err(|e| match e {
        Error::NonFinite { step, g_gan, g_l1, .. } => non_finite(step, d_loss, g_gan, g_l1),
        e => e,
    })?;
    match direction {
        Direction::A => state.counters.direction_a_steps += 1,
        Direction::B => state.counters.direction_b_steps += 1,
    }
    state.step += 1;
    if state.mode == TrainMode::One2One {
        state.next_direction = direction.flipped();
    }
    Ok(StepRecord {
        step: state.step,
        direction,
        losses: LossBreakdown {
            d_loss,
            g_gan_loss: g_gan,
            g_l1_loss: g_l1,
            g_total: g_gan + cfg.loss.lambda_l1 * g_l1,
        },
    })
}

/// Output locations of a training run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("final.ckpt")
    }
    pub fn periodic_checkpoint(&self, step: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("step_{step:08}.ckpt"))
    }
    pub fn loss_log(&self) -> PathBuf {
        self.root.join("loss_log.csv")
    }
}

fn check_dataset(cfg: &TrainConfig, dataset: &PairedDataset) -> Result<()> {
    let [c, h, w] = dataset
        .image_shape()
        .ok_or_else(|| Error::Dataset("training dataset is empty".into()))?;
    if c != cfg.generator.in_channels {
        return Err(Error::Dataset(format!(
            "dataset images have {c} channels, generator expects {}",
            cfg.generator.in_channels
        )));
    }
    if h < cfg.augment.crop_size || w < cfg.augment.crop_size {
        return Err(Error::Dataset(format!(
            "dataset images are {h}x{w}, smaller than crop size {}",
            cfg.augment.crop_size
        )));
    }
    Ok(())
}

/// Jittered batch for the given 0-based step.
fn step_batch(cfg: &TrainConfig, seed: u64, dataset: &PairedDataset, order: &[Vec<usize>], plan: &StepPlan, step: u64) -> Result<(ImageTensor, ImageTensor)> {
    let mut rng = stream(seed, Purpose::Augment, step);
    let jittered: Vec<PairedSample> = order[plan.batch]
        .iter()
        .map(|&i| augment_pair(&dataset.samples[i], &cfg.augment, &mut rng))
        .collect::<Result<_>>()?;
    let refs: Vec<&PairedSample> = jittered.iter().collect();
    stack_samples(&refs)
}

/// Run from `state.step` to the end of `cfg.epochs`, calling `observer` after
/// every step. With `out`, writes the loss log, periodic checkpoints and
/// `final.ckpt` there.
pub fn train_from(
    state: &mut TrainState,
    cfg: &TrainConfig,
    dataset: &PairedDataset,
    out: Option<&Path>,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<Checkpoint> {
    cfg.validate()?;
    check_dataset(cfg, dataset)?;
    let paths = out.map(RunPaths::new);
    let mut log = match &paths {
        Some(p) => {
            std::fs::create_dir_all(&p.root).map_err(|e| Error::io(&p.root, e))?;
            Some(LossLog::open(&p.loss_log(), state.step)?)
        }
        None => None,
    };
    let n = dataset.len();
    let total = cfg.total_steps(n);
    let mut cached: Option<((u64, u64), Vec<Vec<usize>>)> = None;
    while state.step < total {
        let s = state.step;
        let plan = step_plan(cfg, n, s);
        if state.mode == TrainMode::One2One && plan.direction != state.next_direction {
            return Err(Error::CheckpointCorrupt(format!(
                "state expects direction {} at step {s} but the schedule says {}",
                state.next_direction, plan.direction
            )));
        }
        let key = (plan.epoch, plan.pass);
        if cached.as_ref().map(|(k, _)| *k) != Some(key) {
            let mut rng = stream(state.seed, Purpose::Shuffle, 2 * plan.epoch + plan.pass);
            cached = Some((key, batch_indices(n, cfg.batch_size, true, &mut rng)));
        }
        let order = &cached.as_ref().expect("filled above").1;
        let (x, y) = step_batch(cfg, state.seed, dataset, order, &plan, s)?;
        let record = train_step(state, &x, &y, cfg)?;
        if let Some(log) = log.as_mut() {
            if (record.step - 1) % cfg.log_every == 0 {
                log.append(&record)?;
            }
        }
        if let Some(p) = &paths {
            if cfg.checkpoint_every > 0 && record.step % cfg.checkpoint_every == 0 {
                save_checkpoint(&state.to_checkpoint(cfg)?, &p.periodic_checkpoint(record.step))?;
            }
        }
        observer(&record);
    }
    let ckpt = state.to_checkpoint(cfg)?;
    if let Some(p) = &paths {
        save_checkpoint(&ckpt, &p.final_checkpoint())?;
    }
    Ok(ckpt)
}

/// Fresh run of `cfg` over `dataset`.
pub fn train(cfg: &TrainConfig, dataset: &PairedDataset, out: Option<&Path>) -> Result<Checkpoint> {
    let mut state = TrainState::new(cfg)?;
    train_from(&mut state, cfg, dataset, out, &mut |_| {})
}

/// Load a checkpoint written by a training run for continuation.
pub fn resume(path: &Path) -> Result<(TrainState, TrainConfig)> {
    TrainState::from_checkpoint(&load_checkpoint(path)?)
}
