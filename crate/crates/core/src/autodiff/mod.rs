//! Minimal reverse-mode automatic differentiation: dense tensors, a linear
//! operation tape, fully connected networks with optional batch
//! normalization, and an Adam optimizer over flat parameter vectors.

mod adam;
mod mlp;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use mlp::{Activation, BatchNorm, ForwardPass, Layer, LayerSpec, Mlp, Mode};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
