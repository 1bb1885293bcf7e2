//! Dense tensors, reverse-mode autodiff, the DFT magnitude, Adam and the
//! plateau learning-rate scheduler.

mod dft;
mod graph;
mod kernels;
mod optim;
mod scalar;
mod tensor;

pub use dft::{dft_magnitude_values, DftBasis};
pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamConfig, AdamState, PlateauScheduler};
pub use scalar::Scalar;
pub use tensor::{NamedTensor, Tensor};
