//! One-step optimization of interpolation weights on development data.
//!
//! Weights are re-parameterized as a softmax over free logits so a
//! gradient step cannot leave the probability simplex. Starting from
//! zero logits (the uniform average), one full-batch gradient step of
//! size eta is taken on the dev loss; the raw checkpoint parameters are
//! never touched.
//!
//! With w = softmax(g), theta_hat = sum_k w_k theta_k and
//! s_j = <grad L(theta_hat), theta_j>, the chain rule gives
//! dL/dg_k = w_k (s_k - sum_j w_j s_j), which is what
//! [`grad_wrt_logits`] evaluates; the s_j are streamed per-tensor dot
//! products, so no extra full model copies are held.

use serde::Serialize;

use crate::averaging::{mean_params_f64, WeightVector};
use crate::error::{Error, Result};
use crate::num::softmax_stable;
use crate::objective::DevObjective;
use crate::store::Checkpoint;
use crate::tensor::TensorMap;

/// Free logits over a selected checkpoint set.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    logits: Vec<f64>,
}

impl LogitVector {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if let Some(g) = logits.iter().find(|g| !g.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "logits must be finite, got {g}"
            )));
        }
        Ok(Self { logits })
    }

    /// The zero initialization; its softmax is the uniform average.
    pub fn zeros(k: usize) -> Self {
        Self {
            logits: vec![0.0; k],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

/// Logit-space step size for the one-step update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeConfig {
    eta: f64,
}

impl OptimizeConfig {
    pub fn new(eta: f64) -> Result<Self> {
        if !eta.is_finite() || eta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "step size must be finite and >= 0, got {eta}"
            )));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

/// Normalizing softmax over logits (max-subtracted).
pub fn softmax(logits: &LogitVector) -> WeightVector {
    if logits.is_empty() {
        return WeightVector::new(vec![]).unwrap_or_else(|_| unreachable!());
    }
    WeightVector::new(softmax_stable(logits.as_slice()))
        .expect("softmax output is a valid weight vector")
}

/// Dev loss and perplexity of the interpolated parameters
/// theta_hat = sum_k w_k theta_k, materialized once in f64.
pub fn dev_loss_of_weights(
    ckpts: &[Checkpoint],
    w: &WeightVector,
    objective: &(impl DevObjective + ?Sized),
) -> Result<(f64, f64)> {
    let mean = mean_params_f64(ckpts, w)?;
    let loss = objective.loss(&mean)?;
    Ok((loss, loss.exp()))
}

/// Gradient of the dev loss w.r.t. the logits.
///
/// Components always sum to zero (softmax Jacobian rows do), so the
/// updated logits never drift.
pub fn grad_wrt_logits(
    ckpts: &[Checkpoint],
    logits: &LogitVector,
    objective: &(impl DevObjective + ?Sized),
) -> Result<Vec<f64>> {
    if logits.len() != ckpts.len() {
        return Err(Error::InvalidConfig(format!(
            "{} logits for {} checkpoints",
            logits.len(),
            ckpts.len()
        )));
    }
    let w = softmax(logits);
    let mean = mean_params_f64(ckpts, &w)?;
    let loss_grad = objective.grad(&mean)?;

    let scores: Vec<f64> = ckpts
        .iter()
        .map(|c| dot_mixed(&loss_grad, c.params()))
        .collect::<Result<_>>()?;

    // sum_j w_j s_j in checkpoint-step order, matching the averaging
    // module's fixed reduction order.
    let mut order: Vec<usize> = (0..ckpts.len()).collect();
    order.sort_by_key(|&i| ckpts[i].meta().step);
    let mut weighted_score = 0.0f64;
    for &i in &order {
        weighted_score += w.as_slice()[i] * scores[i];
    }

    Ok(w.as_slice()
        .iter()
        .zip(&scores)
        .map(|(&wk, &sk)| wk * (sk - weighted_score))
        .collect())
}

/// Flat inner product of an f64 gradient map with f32 parameters,
/// accumulated per tensor in name order.
fn dot_mixed(grad: &TensorMap<f64>, params: &TensorMap<f32>) -> Result<f64> {
    let mut acc = 0.0f64;
    for (name, g) in grad.iter() {
        let p = params.get(name).ok_or_else(|| Error::MissingTensor {
            name: name.to_string(),
            index: 0,
        })?;
        for (&gv, &pv) in g.data().iter().zip(p.data()) {
            acc += gv * pv as f64;
        }
    }
    Ok(acc)
}

/// Outcome of [`one_step_optimize`]: the updated logits and weights plus
/// the dev loss before (uniform) and after the step.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizeReport {
    pub eta: f64,
    pub logits: Vec<f64>,
    pub logit_grad: Vec<f64>,
    pub loss_before: f64,
    pub ppl_before: f64,
    pub loss_after: f64,
    pub ppl_after: f64,
    pub weights: Vec<f64>,
}

/// One gradient-descent step on the logits, starting from zero:
/// g1 = -eta * grad, w = softmax(g1). Only the logits move.
pub fn one_step_optimize(
    ckpts: &[Checkpoint],
    objective: &(impl DevObjective + ?Sized),
    cfg: OptimizeConfig,
) -> Result<(WeightVector, OptimizeReport)> {
    if ckpts.len() < 2 {
        return Err(Error::TooFewCheckpoints(ckpts.len()));
    }
    let start = LogitVector::zeros(ckpts.len());
    let grad = grad_wrt_logits(ckpts, &start, objective)?;
    let updated = LogitVector::new(grad.iter().map(|g| -cfg.eta() * g).collect())?;
    let weights = softmax(&updated);

    let (loss_before, ppl_before) = dev_loss_of_weights(ckpts, &softmax(&start), objective)?;
    let (loss_after, ppl_after) = dev_loss_of_weights(ckpts, &weights, objective)?;

    let report = OptimizeReport {
        eta: cfg.eta(),
        logits: updated.as_slice().to_vec(),
        logit_grad: grad,
        loss_before,
        ppl_before,
        loss_after,
        ppl_after,
        weights: weights.as_slice().to_vec(),
    };
    Ok((weights, report))
}
