//! Dense linear algebra and reverse-mode gradients for the layer set used
//! by the agent and mixing networks: fully connected layers, GRU cells,
//! elementwise activations and the per-sample mixing contraction.

pub mod layers;
pub mod matrix;
pub mod optim;
pub mod tape;

pub use layers::{gru_step, linear_forward, GruCellParams, GruNodes};
pub use matrix::Matrix;
pub use optim::{rmsprop_step, RmsProp, RmsPropConfig};
pub use tape::{elu, sigmoid, Gradients, NodeId, ParamId, Tape};
