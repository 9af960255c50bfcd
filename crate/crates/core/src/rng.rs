//! Deterministic random streams.
//!
//! Every consumer of randomness draws from its own stream keyed by
//! `(seed, purpose, index)`, so a run's randomness is a pure function of its
//! seed and position. That is what makes resumed runs bit-identical: the
//! persisted "rng state" is just the seed plus the step counter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type RandomStream = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    GeneratorInit,
    DiscriminatorInit,
    /// Indexed by epoch (and pass, for interleaved alternation).
    Shuffle,
    /// Indexed by optimization step.
    Augment,
    /// Indexed by optimization step.
    Dropout,
    /// Indexed by sample number.
    Synthetic,
}

impl Purpose {
    fn tag(self) -> &'static [u8] {
        match self {
            Purpose::GeneratorInit => b"generator-init",
            Purpose::DiscriminatorInit => b"discriminator-init",
            Purpose::Shuffle => b"shuffle",
            Purpose::Augment => b"augment",
            Purpose::Dropout => b"dropout",
            Purpose::Synthetic => b"synthetic",
        }
    }
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> RandomStream {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.tag());
    h.update(index.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(key)
}
