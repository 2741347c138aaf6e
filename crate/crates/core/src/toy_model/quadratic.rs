//! Quadratic bowl task with a known optimum.
//!
//! Checkpoints are noisy copies of a known center with loss
//! L(theta) = ||theta - center||^2 / dim and exact gradients, giving
//! the averaging and gradient-step operations an analytic oracle.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::DevObjective;
use crate::store::{self, Checkpoint, CheckpointMeta};
use crate::tensor::{Tensor, TensorMap};

use super::checkpoint_filename;

/// Name of the single parameter tensor of the quadratic task.
pub const THETA: &str = "theta";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticTaskSpec {
    pub dim: usize,
    pub center: Vec<f64>,
    pub noise_sigma: f64,
    pub num_checkpoints: usize,
    pub seed: u64,
}

impl QuadraticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim != self.center.len() {
            return Err(Error::InvalidConfig(format!(
                "dim {} must be >= 1 and match center length {}",
                self.dim,
                self.center.len()
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.num_checkpoints == 0 {
            return Err(Error::InvalidConfig("num_checkpoints must be >= 1".into()));
        }
        Ok(())
    }
}

/// Builds one quadratic-task checkpoint around `center` from already
/// f32-rounded parameter values: loss, perplexity and stored gradient
/// are all computed from exactly what the file will contain.
pub fn quadratic_checkpoint(center: &[f64], theta32: Vec<f32>, step: u64) -> Result<Checkpoint> {
    let dim = center.len();
    if theta32.len() != dim {
        return Err(Error::InvalidConfig(format!(
            "theta has {} entries, center has {dim}",
            theta32.len()
        )));
    }
    let loss = quadratic_loss_of(center, &theta32);
    let grad32: Vec<f32> = theta32
        .iter()
        .zip(center)
        .map(|(&t, &c)| (2.0 * (t as f64 - c) / dim as f64) as f32)
        .collect();

    let mut params = TensorMap::new();
    params.insert(THETA, Tensor::new(vec![dim], theta32)?)?;
    let mut grads = TensorMap::new();
    grads.insert(THETA, Tensor::new(vec![dim], grad32)?)?;
    Checkpoint::new(
        params,
        Some(grads),
        CheckpointMeta::new(step, Some(loss.exp()), "quadratic")?,
    )
}

fn quadratic_loss_of(center: &[f64], theta32: &[f32]) -> f64 {
    let dim = center.len();
    theta32
        .iter()
        .zip(center)
        .map(|(&t, &c)| {
            let d = t as f64 - c;
            d * d
        })
        .sum::<f64>()
        / dim as f64
}

/// Samples `num_checkpoints` noisy copies of the center and writes them
/// as checkpoint files. The metadata step is the sample index.
pub fn sample_quadratic_checkpoints(
    spec: &QuadraticTaskSpec,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<CheckpointMeta>> {
    let ckpts = sample_quadratic_series(spec)?;
    let out_dir = out_dir.as_ref();
    let mut metas = Vec::with_capacity(ckpts.len());
    for ckpt in &ckpts {
        store::write_checkpoint(out_dir.join(checkpoint_filename(ckpt.meta().step)), ckpt)?;
        metas.push(ckpt.meta().clone());
    }
    Ok(metas)
}

/// In-memory variant of [`sample_quadratic_checkpoints`].
pub fn sample_quadratic_series(spec: &QuadraticTaskSpec) -> Result<Vec<Checkpoint>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ckpts = Vec::with_capacity(spec.num_checkpoints);
    for k in 0..spec.num_checkpoints {
        let theta32: Vec<f32> = spec
            .center
            .iter()
            .map(|&c| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                (c + spec.noise_sigma * eps) as f32
            })
            .collect();
        ckpts.push(quadratic_checkpoint(&spec.center, theta32, k as u64)?);
    }
    Ok(ckpts)
}

/// The quadratic bowl as a [`DevObjective`] over the "theta" tensor.
pub struct QuadraticObjective {
    center: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(center: Vec<f64>) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidConfig("center must be non-empty".into()));
        }
        Ok(Self { center })
    }

    fn theta<'a>(&self, params: &'a TensorMap<f64>) -> Result<&'a [f64]> {
        let t = params.get(THETA).ok_or_else(|| {
            Error::InvalidConfig(format!("quadratic task expects a \"{THETA}\" tensor"))
        })?;
        if t.len() != self.center.len() {
            return Err(Error::InvalidConfig(format!(
                "theta has {} entries, center has {}",
                t.len(),
                self.center.len()
            )));
        }
        Ok(t.data())
    }
}

impl DevObjective for QuadraticObjective {
    fn loss(&self, params: &TensorMap<f64>) -> Result<f64> {
        let theta = self.theta(params)?;
        let dim = self.center.len() as f64;
        Ok(theta
            .iter()
            .zip(&self.center)
            .map(|(&t, &c)| (t - c) * (t - c))
            .sum::<f64>()
            / dim)
    }

    fn grad(&self, params: &TensorMap<f64>) -> Result<TensorMap<f64>> {
        let theta = self.theta(params)?;
        let dim = self.center.len() as f64;
        let g: Vec<f64> = theta
            .iter()
            .zip(&self.center)
            .map(|(&t, &c)| 2.0 * (t - c) / dim)
            .collect();
        let mut out = TensorMap::new();
        out.insert(THETA, Tensor::new(vec![self.center.len()], g)?)?;
        Ok(out)
    }
}
