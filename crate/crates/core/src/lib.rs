//! Masked transformer autoencoder for 1-D fetal heart rate (FHR) signals.
//!
//! The crate is `no_std` (with `alloc`) and purely computational: a small
//! reverse-mode autodiff engine, the encoder-decoder model, the hybrid
//! time/frequency objective, evaluation metrics, the training loop with early
//! stopping, signal preprocessing, and the inpainting / forecasting
//! procedures. File formats and the command-line front end live in the
//! companion `fhrformer` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod apps;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod prep;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{FhrFormer, ModelConfig};
pub use numerics::{Graph, Scalar, Tensor, Var};
