//! Minimal residual CNN with hand-written backpropagation.

mod layers;
mod network;
mod optim;
mod scalar;
mod tensor;

pub use layers::Mode;
pub use network::{soft_cross_entropy, softmax, ArchConfig, Network, Trace};
pub use optim::{Adam, Sgd};
pub use scalar::Scalar;
pub use tensor::Tensor;
