//! Self-inverse image-to-image translation.
//!
//! A single U-Net generator is trained alternately on `(x, y)` and `(y, x)`
//! pairs so that the learned map is its own inverse. The crate also contains
//! the two-generator baseline, the conditional GAN + L1 objective, image
//! quality metrics, and a perturbation-based model sensitivity protocol.

pub mod datasets;
pub mod error;
pub mod gradcheck;
pub mod manifest;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod selfcheck;
pub mod sensitivity;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, Scalar, Tensor};
