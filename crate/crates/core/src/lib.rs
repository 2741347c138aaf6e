//! Checkpoint averaging engine.
//!
//! Takes series of saved model checkpoints and builds better models out
//! of them: uniform and perplexity-weighted parameter averages, a
//! gradient-step extension using the gradients stored alongside the
//! parameters, and a one-step optimization of the interpolation weights
//! on development data. Selection strategies, sweep harnesses and a
//! built-in toy model/trainer make every behavior testable at desk
//! scale.
//!
//! The numeric kernels are generic over the scalar type (see
//! [`num::Scalar`]); checkpoints store f32 on disk while accumulation
//! and evaluation run in f64.

pub mod averaging;
pub mod error;
pub mod num;
pub mod objective;
pub mod selection;
pub mod store;
pub mod sweep;
pub mod tensor;
pub mod toy_model;
pub mod weight_optimizer;

pub use error::{Error, Result};
pub use num::Scalar;
pub use store::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta};
pub use tensor::{Tensor, TensorMap};

/// Storage-precision tensor (what checkpoint files hold).
pub type Tensor32 = Tensor<f32>;
/// Accumulation/evaluation-precision tensor.
pub type Tensor64 = Tensor<f64>;
/// Storage-precision tensor map.
pub type TensorMap32 = TensorMap<f32>;
/// Accumulation/evaluation-precision tensor map.
pub type TensorMap64 = TensorMap<f64>;
