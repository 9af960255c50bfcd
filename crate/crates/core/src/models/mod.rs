//! Network architectures and their on-disk form.

mod checkpoint;
mod discriminator;
mod generator;

pub use checkpoint::{
    export_state, import_state, load_checkpoint, save_checkpoint, Checkpoint, Direction, NamedArray, OptimizerState,
    RngState, TrainMode, FORMAT_VERSION,
};
pub use discriminator::{Discriminator, DiscriminatorSpec, ProbabilityMap};
pub use generator::{Generator, GeneratorSpec};

use rand::Rng;

use crate::error::Result;
use crate::nn::Module;
use crate::tensor::Scalar;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

pub fn build_generator<T: Scalar, R: Rng + ?Sized>(spec: GeneratorSpec, rng: &mut R) -> Result<Generator<T>> {
    Generator::new(spec, rng)
}

pub fn build_discriminator<T: Scalar, R: Rng + ?Sized>(
    spec: DiscriminatorSpec,
    rng: &mut R,
) -> Result<Discriminator<T>> {
    Discriminator::new(spec, rng)
}

/// Exact number of scalar learnable parameters.
pub fn parameter_count<T: Scalar>(model: &dyn Module<T>) -> usize {
    model.parameter_count()
}
