//! A minimal differentiable network engine.
//!
//! Networks are a fixed sequence of layers (see [`Layer`]) with an explicit
//! backward pass. Everything is generic over [`Scalar`], so the same code
//! trains in `f32` and is gradient-checked in `f64`.

pub mod gradcheck;
mod layers;
mod loss;
mod model;
mod optim;
mod scalar;
mod tensor;

pub use self::layers::{Dims, Layer, BN_EPS, BN_MOMENTUM};
pub use self::loss::{log_softmax_row, soft_ce_loss, soft_ce_rows, soft_ce_with_grad};
pub use self::model::{Architecture, Gradients, Model, ModelSpec, Trace};
pub use self::optim::{sgd_step, sgd_update, OptimState};
pub use self::scalar::Scalar;
pub use self::tensor::{flat_labels, Tensor};
