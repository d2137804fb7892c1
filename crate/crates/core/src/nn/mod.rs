//! Small convolutional classifier with hand-written backpropagation.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod sgd;

pub use network::{ForwardCache, Mode, ModelParams, NetworkConfig, ParamSet, Tensor};
pub use sgd::sgd_step;
