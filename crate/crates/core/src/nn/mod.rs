//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during a recording forward
//! pass and accumulates parameter gradients into [`Param::grad`]. A layer can
//! be backpropagated once per recorded forward; running two forwards before a
//! backward overwrites the first cache.

mod act;
mod conv;
mod norm;

pub use act::{Activation, Dropout};
pub use conv::{Conv2d, ConvTranspose2d};
pub use norm::BatchNorm2d;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Scalar;

/// A named, shaped, flat parameter array with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Param {
            name: name.into(),
            shape,
            value: vec![T::ZERO; len],
            grad: vec![T::ZERO; len],
        }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: T) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    /// Gaussian initialization around `mean` with standard deviation `std`.
    pub fn normal<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: Vec<usize>,
        mean: f64,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(name, shape);
        let dist = Normal::new(mean, std).expect("valid normal parameters");
        for v in p.value.iter_mut() {
            *v = T::of(dist.sample(rng));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::ZERO);
    }
}

/// How a forward pass treats the stateful and stochastic parts of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    /// Normalize with per-batch statistics (and update running averages)
    /// instead of the stored running averages.
    pub batch_stats: bool,
    /// Apply dropout.
    pub dropout: bool,
    /// Keep intermediate values so that `backward` can be called.
    pub record: bool,
}

impl ForwardMode {
    /// Optimization step: batch statistics, dropout, recording.
    pub const TRAIN: ForwardMode = ForwardMode {
        batch_stats: true,
        dropout: true,
        record: true,
    };
    /// Deterministic inference with running statistics.
    pub const EVAL: ForwardMode = ForwardMode {
        batch_stats: false,
        dropout: false,
        record: false,
    };
    /// Train-mode normalization without dropout; used by gradient checks.
    pub const TRAIN_DETERMINISTIC: ForwardMode = ForwardMode {
        batch_stats: true,
        dropout: false,
        record: true,
    };
}

/// Anything that owns learnable parameters and persistent buffers.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    /// Non-learnable persistent state (normalization running statistics).
    fn buffers(&self) -> Vec<&Param<T>> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Number of scalar learnable parameters.
    fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Prefix every parameter and buffer name with `prefix.`.
    fn prefix_names(&mut self, prefix: &str) {
        for p in self.params_mut() {
            p.name = format!("{prefix}.{}", p.name);
        }
        for b in self.buffers_mut() {
            b.name = format!("{prefix}.{}", b.name);
        }
    }
}
