//! Minimal convolutional network engine: tensors, layers with explicit
//! backward passes, and the Adam optimiser.

mod adam;
mod layers;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{LayerSpec, Network, PadMode, Tape};
pub use tensor::Tensor;
