//! Development-data objective evaluated on materialized parameters.
//!
//! Sweeps and the weight optimizer only need a scalar dev loss and its
//! analytic parameter gradient; this trait decouples them from the
//! concrete task. The MLP classifier and the quadratic bowl both
//! implement it.

use crate::error::Result;
use crate::tensor::TensorMap;

/// A differentiable development objective over model parameters.
pub trait DevObjective: Sync {
    /// Mean development loss at `params`. Dev perplexity is `exp` of this.
    fn loss(&self, params: &TensorMap<f64>) -> Result<f64>;

    /// Analytic gradient of [`DevObjective::loss`], same names and
    /// shapes as `params`.
    fn grad(&self, params: &TensorMap<f64>) -> Result<TensorMap<f64>>;
}
