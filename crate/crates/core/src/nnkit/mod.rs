//! Minimal dense-network kernel: tensors, layers, a gradient tape, Adam,
//! a seeded RNG, and the likelihood / KL primitives.

pub mod adam;
pub mod dist;
pub mod gradcheck;
pub mod layer;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use layer::{Binding, DenseLayer, Parameterized};
pub use rng::Rng;
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
