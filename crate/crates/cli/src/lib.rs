//! The `one2one` command line: dataset synthesis, training in the three
//! modes, evaluation with result panels, the perturbation sensitivity
//! protocol and the self-check.
//!
//! Every command writes only under its `--out` directory and seals it with a
//! `manifest.json`.

pub mod commands;
pub mod config;
pub mod panel;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use one2one::datasets::{Split, SyntheticTask, Texture};
use one2one::metrics::Metric;
use one2one::models::{Direction, TrainMode};
use one2one::selfcheck::Fault;
use one2one::training::Alternation;

pub use commands::{run, EvalSummary};
pub use config::FlatConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVARIANT: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs: exit 2.
    Usage(String),
    /// A checked invariant did not hold: exit 1.
    Invariant(String),
    Core(one2one::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use one2one::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::Core(E::Config(_) | E::Dataset(_) | E::Orphan { .. }) => EXIT_USAGE,
            CliError::Core(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Invariant(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<one2one::Error> for CliError {
    fn from(e: one2one::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "one2one",
    version,
    args_override_self = true,
    about = "Self-inverse paired image translation: one generator trained for both directions",
    after_help = "Exit codes: 0 success, 1 invariant or self-check failure, 2 usage or configuration error, 3 runtime error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic paired dataset whose true map is its own inverse.
    Synth(SynthArgs),
    /// Train one2one, pix2pixA or pix2pixB.
    Train(TrainArgs),
    /// Score a checkpoint on a split and draw result panels.
    Eval(EvalArgs),
    /// Compare how much baseline and one2one outputs move when their inputs
    /// are replaced by the opposite baseline's reconstruction.
    Sensitivity(SensitivityArgs),
    /// Gradient checks, architecture shapes, metric oracles and loss values.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// biased_negation (bright texture and its negative) or gamma_swap
    /// (texture in [0.55,1] and its square). Both maps are involutions.
    #[arg(long)]
    pub task: SyntheticTask,
    /// Image side in pixels; a power of two no smaller than 2^depth.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Training pairs.
    #[arg(long)]
    pub n: usize,
    /// Validation pairs.
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    /// Test pairs.
    #[arg(long, default_value_t = 0)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// smoothed_noise or shapes.
    #[arg(long, default_value = "smoothed_noise")]
    pub texture: Texture,
    /// Depth of the generator the data is for; only sets the minimum size.
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    /// Output dataset root (gets trainA/trainB, valA/valB, testA/testB).
    #[arg(long)]
    pub out: PathBuf,
}

/// Training hyperparameters. Each may also be given in `--config`; flags
/// win over the file, the file over the desk defaults.
#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    /// one2one (one generator, alternating directions), pix2pixA (X to Y
    /// only) or pix2pixB (Y to X only). [default: one2one]
    #[arg(long)]
    pub mode: Option<TrainMode>,
    /// Passes over the training pairs. [default: 40]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pairs per optimization step. [default: 8]
    #[arg(long = "batch-size", alias = "batch")]
    pub batch_size: Option<usize>,
    /// Adam learning rate, as in the pix2pix training recipe. [default: 2e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam first-moment decay, as in the pix2pix training recipe. [default: 0.5]
    #[arg(long = "adam-beta1")]
    pub adam_beta1: Option<f64>,
    /// Adam second-moment decay. [default: 0.999]
    #[arg(long = "adam-beta2")]
    pub adam_beta2: Option<f64>,
    /// Seed of every random stream (init, shuffling, jitter, dropout). [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the L1 reconstruction term against the adversarial term
    /// in the generator objective. [default: 100]
    #[arg(long = "lambda-l1")]
    pub lambda_l1: Option<f64>,
    /// Jitter: resize to this side before the random crop. [default: 72]
    #[arg(long = "load-size")]
    pub load_size: Option<usize>,
    /// Jitter: random crop side, the training resolution. [default: 64]
    #[arg(long = "crop-size")]
    pub crop_size: Option<usize>,
    /// Enable resize-and-crop jitter. [default: true]
    #[arg(long)]
    pub augment: Option<bool>,
    /// Intermediate checkpoint every this many steps, 0 for none. [default: 0]
    #[arg(long = "checkpoint-every")]
    pub checkpoint_every: Option<u64>,
    /// Loss log row every this many steps. [default: 10]
    #[arg(long = "log-every")]
    pub log_every: Option<u64>,
    /// one2one step layout: same_batch (A then B on each batch) or
    /// interleaved (two shuffled passes per epoch). [default: same_batch]
    #[arg(long)]
    pub alternation: Option<Alternation>,
    /// Image channels, 1 or 3. [default: 1]
    #[arg(long)]
    pub channels: Option<usize>,
    /// U-Net stride-2 downsamplings; 8 gives the 256-pixel, 1x1-bottleneck
    /// network. [default: 6]
    #[arg(long)]
    pub depth: Option<usize>,
    /// Filters of the first encoder level; doubles per level. [default: 32]
    #[arg(long = "base-filters")]
    pub base_filters: Option<usize>,
    /// Cap on encoder filters. [default: 512]
    #[arg(long = "max-filters")]
    pub max_filters: Option<usize>,
    /// Dropout probability in the three innermost decoder blocks, the
    /// generator's only noise source. [default: 0.5]
    #[arg(long = "dropout-p")]
    pub dropout_p: Option<f64>,
    /// Patch discriminator filters, comma separated and strictly increasing;
    /// 64,128,256,512 is the 70x70 patch network. [default: 32,64,128,256]
    #[arg(long = "filter-schedule", value_delimiter = ',')]
    pub filter_schedule: Option<Vec<usize>>,
}

impl TrainFlags {
    pub fn to_flat(&self) -> FlatConfig {
        FlatConfig {
            mode: self.mode,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            seed: self.seed,
            lambda_l1: self.lambda_l1,
            load_size: self.load_size,
            crop_size: self.crop_size,
            augment: self.augment,
            checkpoint_every: self.checkpoint_every,
            log_every: self.log_every,
            alternation: self.alternation,
            channels: self.channels,
            depth: self.depth,
            base_filters: self.base_filters,
            max_filters: self.max_filters,
            dropout_p: self.dropout_p,
            filter_schedule: self.filter_schedule.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root with trainA/trainB.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory: final.ckpt, loss_log.csv, checkpoints/, manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat JSON object keyed by the flag names with underscores.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a training checkpoint. Only epochs, checkpoint-every and
    /// log-every may be changed.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    #[value(name = "A2B")]
    A2B,
    #[value(name = "B2A")]
    B2A,
    #[value(name = "both")]
    Both,
}

impl DirectionArg {
    pub fn directions(self) -> Vec<Direction> {
        match self {
            DirectionArg::A2B => vec![Direction::A],
            DirectionArg::B2A => vec![Direction::B],
            DirectionArg::Both => vec![Direction::A, Direction::B],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalStub {
    /// Return each input's dataset label exactly.
    ExactLabel,
    /// Return the input unchanged.
    Identity,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate (required unless --stub is given).
    #[arg(long, required_unless_present = "stub")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: Split,
    /// A2B, B2A or both. Baselines only run their trained direction.
    #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
    pub direction: DirectionArg,
    /// Rows in each result panel (input | output | target, captioned with
    /// PSNR and SSIM); 0 disables panels.
    #[arg(long, default_value_t = 8)]
    pub panels: usize,
    /// Test hook: evaluate a stub translator instead of a checkpoint.
    #[arg(long, value_enum)]
    pub stub: Option<EvalStub>,
    /// Image channels when running a stub.
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Output directory for reports, panels and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PerturberStub {
    /// The opposite baseline returns the clean input exactly, so the
    /// perturbation is zero.
    ExactInverse,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// pix2pixA checkpoint (X to Y baseline).
    #[arg(long = "pix2pix-a")]
    pub pix2pix_a: PathBuf,
    /// pix2pixB checkpoint (Y to X baseline).
    #[arg(long = "pix2pix-b")]
    pub pix2pix_b: PathBuf,
    /// one2one checkpoint.
    #[arg(long)]
    pub one2one: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: Split,
    #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
    pub direction: DirectionArg,
    /// Comma-separated subset of psnr, ssim, l1.
    #[arg(long, value_delimiter = ',', default_value = "psnr,ssim,l1")]
    pub metrics: Vec<Metric>,
    /// Test hook: replace the perturbing baseline with a stub.
    #[arg(long = "stub-perturber", value_enum)]
    pub stub_perturber: Option<PerturberStub>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    /// Test hook: run the metric oracles against a deliberately broken
    /// metric (psnr-natural-log, ssim-uniform-window, l1-squared).
    #[arg(long = "inject-fault")]
    pub inject_fault: Option<Fault>,
    /// Also write selfcheck.json and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
