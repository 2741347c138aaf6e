//! Desk-scale stand-in for a real translation model.
//!
//! A two-layer tanh MLP classifier on synthetic data supplies the dev
//! loss and analytic gradients the averaging experiments need, without
//! any autodiff dependency. A quadratic bowl task with a known optimum
//! provides exact oracles for the landscape claims. Training and
//! evaluation run in f64; f32 enters only at checkpoint serialization.

mod data;
mod mlp;
mod quadratic;
mod train;

pub use data::{make_synthetic_data, DevSet};
pub use mlp::{accuracy, forward_loss, grad_params, init_params, MlpObjective};
pub use quadratic::{
    quadratic_checkpoint, sample_quadratic_checkpoints, sample_quadratic_series,
    QuadraticObjective, QuadraticTaskSpec, THETA,
};
pub use train::{checkpoint_filename, train_with_checkpoints, AdamConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the built-in classifier. The hidden activation is
/// always tanh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ToyModelSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dim,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig(format!(
                "all model dimensions must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}
