//! Minimal differentiable core: tensors, the layer set used by the model,
//! weighted binary cross-entropy, SGD and finite-difference checks.
//!
//! Every layer has an `infer(&self)` path for evaluation, which can run
//! concurrently, and a `Layer::forward_train` path that caches what
//! `backward` needs.

pub mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod sgd;
mod tensor;

pub use layers::{sigmoid, Activation, BatchNorm1d, Conv1d, Dense, MaxPool1d, Relu, BN_EPS, BN_MOMENTUM, POOL_WINDOW};
pub use loss::{weighted_bce, weighted_bce_single, PROB_CLAMP};
pub use lstm::{BiLstm, Lstm};
pub use sgd::Sgd;
pub use tensor::{Layer, NamedTensor, Params, Tensor};
pub(crate) use tensor::join_name;
