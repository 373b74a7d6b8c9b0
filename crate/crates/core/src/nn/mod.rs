//! Dense tensors, the handful of layers the relevance network needs, a
//! reverse-mode tape and the optimizer.

mod graph;
pub mod ops;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, NodeId};
pub use ops::{cross_entropy, dense, dropout, elu, he_init, layer_norm, normal_init, softmax, LAYER_NORM_EPS};
pub use optim::{AdamWConfig, OptimizerState, Schedule};
pub use params::{Gradients, ParamGroup, ParamId, ParamStore};
pub use tensor::Tensor;
