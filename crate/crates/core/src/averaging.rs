//! Interpolation weights and parameter-space averaging.
//!
//! Weights live on the probability simplex. The perplexity-softmax
//! scheme assigns w_k proportional to DevPpl_k^(-tau): tau = 0 recovers
//! uniform weights, large tau concentrates all mass on the best
//! checkpoint. The gradient-step extension moves the averaged
//! parameters a further step against the uniform mean of the stored
//! per-checkpoint gradients.
//!
//! All element arithmetic accumulates in f64 and rounds to f32 once at
//! the end. Per-element contributions are summed in checkpoint-step
//! order, so outputs are byte-stable under joint permutation of the
//! inputs and independent of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::num::softmax_stable;
use crate::store::{validate_compat, Checkpoint, CheckpointMeta};
use crate::tensor::{Tensor, TensorMap};

/// Tolerance for the simplex sum invariant.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Normalized interpolation weights over a selected checkpoint set.
///
/// Entries are non-negative and sum to 1 within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    /// Validates and wraps weights that already sum to 1.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "weights must be finite and non-negative, got {w}"
            )));
        }
        let sum = kahan_sum(&weights);
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOL}"
            )));
        }
        Ok(Self { weights })
    }

    /// Accepts weights whose sum is within `tol` of 1 and renormalizes
    /// them exactly. Used for user-supplied weight lists.
    pub fn from_unnormalized(weights: Vec<f64>, tol: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "weights must be finite and non-negative, got {w}"
            )));
        }
        let sum = kahan_sum(&weights);
        if (sum - 1.0).abs() > tol {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {sum}, expected 1 within {tol}"
            )));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Compensated sum; keeps the simplex check meaningful for large K.
fn kahan_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Softmax temperature over negative log dev perplexities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureConfig {
    tau: f64,
}

impl TemperatureConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature must be finite and >= 0, got {tau}"
            )));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Step size for the gradient-step extension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradStepConfig {
    eta: f64,
}

impl GradStepConfig {
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

/// Uniform weights 1/k.
pub fn uniform_weights(k: usize) -> Result<WeightVector> {
    if k == 0 {
        return Err(Error::InvalidWeights("k must be >= 1".into()));
    }
    WeightVector::new(vec![1.0 / k as f64; k])
}

/// Softmax-normalized negative log perplexities with temperature:
/// w_k proportional to ppl_k^(-tau), computed with max subtraction.
pub fn ppl_softmax_weights(ppls: &[f64], cfg: TemperatureConfig) -> Result<WeightVector> {
    if ppls.is_empty() {
        return Err(Error::InvalidWeights("empty perplexity list".into()));
    }
    if let Some(p) = ppls.iter().find(|p| !p.is_finite() || **p <= 0.0) {
        return Err(Error::InvalidWeights(format!(
            "perplexities must be finite and positive, got {p}"
        )));
    }
    let logits: Vec<f64> = ppls.iter().map(|p| -cfg.tau() * p.ln()).collect();
    WeightVector::new(softmax_stable(&logits))
}

/// Convex combination of checkpoint parameters.
///
/// The output carries the maximum input step, no dev perplexity and no
/// gradients; the tag records the scheme.
pub fn weighted_average(ckpts: &[Checkpoint], w: &WeightVector) -> Result<Checkpoint> {
    combine(ckpts, w, None)
}

/// Weighted average followed by a step of size eta against the uniform
/// mean of the stored gradients. The gradient mean is uniform (1/K)
/// regardless of `w`. Every checkpoint must carry gradients.
pub fn gradient_step_average(
    ckpts: &[Checkpoint],
    w: &WeightVector,
    cfg: GradStepConfig,
) -> Result<Checkpoint> {
    combine(ckpts, w, Some(cfg.eta()))
}

/// Materializes the weighted mean in f64, without rounding to the
/// storage precision. This is the accumulation both [`weighted_average`]
/// and the dev-data weight optimizer share.
pub fn mean_params_f64(ckpts: &[Checkpoint], w: &WeightVector) -> Result<TensorMap<f64>> {
    validate_compat(ckpts)?;
    if w.len() != ckpts.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} checkpoints",
            w.len(),
            ckpts.len()
        )));
    }
    let order = step_order(ckpts);
    let names: Vec<&str> = ckpts[0].params().names().collect();
    let averaged: Vec<(String, Tensor<f64>)> = names
        .par_iter()
        .map(|&name| {
            let shape = ckpts[0].params().get(name).unwrap().shape().to_vec();
            let n: usize = shape.iter().product();
            let mut acc = vec![0.0f64; n];
            for &i in &order {
                let wi = w.as_slice()[i];
                let data = ckpts[i].params().get(name).unwrap().data();
                for (a, &x) in acc.iter_mut().zip(data) {
                    *a += wi * x as f64;
                }
            }
            let tensor = Tensor::new(shape, acc).expect("layout validated upfront");
            (name.to_string(), tensor)
        })
        .collect();
    Ok(averaged.into_iter().collect())
}

/// Fixed accumulation order: by checkpoint step ascending.
fn step_order(ckpts: &[Checkpoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ckpts.len()).collect();
    order.sort_by_key(|&i| ckpts[i].meta().step);
    order
}

fn combine(ckpts: &[Checkpoint], w: &WeightVector, grad_eta: Option<f64>) -> Result<Checkpoint> {
    if grad_eta.is_some() {
        if let Some(i) = ckpts.iter().position(|c| !c.has_grads()) {
            return Err(Error::GradRequired { index: i });
        }
    }

    let mut mean = mean_params_f64(ckpts, w)?;

    // eta = 0 must reproduce the plain average bit-for-bit, so the
    // gradient pass is skipped entirely.
    if let Some(eta) = grad_eta.filter(|&eta| eta != 0.0) {
        let order = step_order(ckpts);
        let k = ckpts.len() as f64;
        let names: Vec<&str> = ckpts[0].params().names().collect();
        let grad_means: Vec<Vec<f64>> = names
            .par_iter()
            .map(|&name| {
                let n = ckpts[0].params().get(name).unwrap().len();
                let mut gacc = vec![0.0f64; n];
                for &i in &order {
                    let g = ckpts[i].grads().unwrap().get(name).unwrap().data();
                    for (a, &x) in gacc.iter_mut().zip(g) {
                        *a += x as f64;
                    }
                }
                gacc
            })
            .collect();
        for ((_, t), gacc) in mean.iter_mut().zip(grad_means) {
            for (a, g) in t.data_mut().iter_mut().zip(gacc) {
                *a -= eta * (g / k);
            }
        }
    }

    let params: TensorMap<f32> = mean.cast();
    let step = ckpts.iter().map(|c| c.meta().step).max().unwrap();
    let tag = match grad_eta {
        None => format!("weighted-average(k={})", ckpts.len()),
        Some(eta) => format!("grad-step-average(k={},eta={eta})", ckpts.len()),
    };
    Checkpoint::with_params(params, CheckpointMeta::new(step, None, tag)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(step: u64, values: &[f32], grad: Option<&[f32]>) -> Checkpoint {
        let mut params = TensorMap::new();
        params
            .insert(
                "w",
                Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
            )
            .unwrap();
        let grads = grad.map(|g| {
            let mut m = TensorMap::new();
            m.insert("w", Tensor::new(vec![g.len()], g.to_vec()).unwrap())
                .unwrap();
            m
        });
        Checkpoint::new(params, grads, CheckpointMeta::new(step, None, "").unwrap()).unwrap()
    }

    #[test]
    fn uniform_weights_sum_to_one() {
        for k in [1usize, 3, 4, 7, 100] {
            let w = uniform_weights(k).unwrap();
            assert_eq!(w.len(), k);
            assert!((kahan_sum(w.as_slice()) - 1.0).abs() <= WEIGHT_SUM_TOL);
        }
        assert_eq!(uniform_weights(4).unwrap().as_slice(), &[0.25; 4]);
        assert_eq!(uniform_weights(1).unwrap().as_slice(), &[1.0]);
        assert!(uniform_weights(0).is_err());
    }

    #[test]
    fn softmax_weights_hand_value() {
        // ppls [5, 10] at tau = 1: weights proportional to 1/5 and 1/10.
        let w = ppl_softmax_weights(&[5.0, 10.0], TemperatureConfig::new(1.0).unwrap()).unwrap();
        assert!((w.as_slice()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.as_slice()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_temperature_is_exactly_uniform() {
        let ppls = [3.7, 912.0, 0.04, 5.5, 1.0];
        let w = ppl_softmax_weights(&ppls, TemperatureConfig::new(0.0).unwrap()).unwrap();
        for &x in w.as_slice() {
            assert_eq!(x, 1.0 / ppls.len() as f64);
        }
    }

    #[test]
    fn huge_temperature_is_one_hot_on_the_argmin() {
        let w =
            ppl_softmax_weights(&[5.0, 10.0, 6.0], TemperatureConfig::new(1e6).unwrap()).unwrap();
        assert!(w.as_slice()[0] >= 1.0 - 1e-12);
        assert!(w.as_slice()[1] <= 1e-12);
        assert!(w.as_slice()[2] <= 1e-12);
    }

    #[test]
    fn softmax_weights_reject_bad_input() {
        let tau = TemperatureConfig::new(1.0).unwrap();
        assert!(ppl_softmax_weights(&[], tau).is_err());
        assert!(ppl_softmax_weights(&[1.0, -2.0], tau).is_err());
        assert!(ppl_softmax_weights(&[1.0, 0.0], tau).is_err());
        assert!(TemperatureConfig::new(-1.0).is_err());
        assert!(TemperatureConfig::new(f64::INFINITY).is_err());
    }

    #[test]
    fn scale_invariance_in_perplexity_units() {
        let tau = TemperatureConfig::new(2.5).unwrap();
        let base = ppl_softmax_weights(&[4.0, 5.0, 9.0], tau).unwrap();
        let scaled = ppl_softmax_weights(&[4.0 * 17.0, 5.0 * 17.0, 9.0 * 17.0], tau).unwrap();
        for (a, b) in base.as_slice().iter().zip(scaled.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_checkpoint_identity_is_bit_exact() {
        let c = ckpt(5, &[1.25, -3.5, 0.1], None);
        let out = weighted_average(
            std::slice::from_ref(&c),
            &WeightVector::new(vec![1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(out.params(), c.params());
        assert!(out.grads().is_none());
        assert!(out.meta().dev_ppl.is_none());
    }

    #[test]
    fn midpoint_of_two_checkpoints() {
        let a = ckpt(1, &[0.0, 0.0], None);
        let b = ckpt(2, &[2.0, 4.0], None);
        let out = weighted_average(&[a, b], &uniform_weights(2).unwrap()).unwrap();
        assert_eq!(out.params().get("w").unwrap().data(), &[1.0, 2.0]);
        assert_eq!(out.meta().step, 2);
    }

    #[test]
    fn joint_permutation_leaves_output_bit_identical() {
        let a = ckpt(1, &[0.3, -1.7, 2.2], None);
        let b = ckpt(2, &[1.1, 0.2, -0.4], None);
        let c = ckpt(3, &[-2.0, 3.3, 0.9], None);
        let w = WeightVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let out1 = weighted_average(&[a.clone(), b.clone(), c.clone()], &w).unwrap();

        let w_perm = WeightVector::new(vec![0.3, 0.2, 0.5]).unwrap();
        let out2 = weighted_average(&[c, a, b], &w_perm).unwrap();
        assert_eq!(
            out1.params().get("w").unwrap().data(),
            out2.params().get("w").unwrap().data()
        );
    }

    #[test]
    fn average_stays_within_elementwise_bounds() {
        let a = ckpt(1, &[-1.0, 5.0], None);
        let b = ckpt(2, &[3.0, -2.0], None);
        let w = WeightVector::new(vec![0.7, 0.3]).unwrap();
        let out = weighted_average(&[a, b], &w).unwrap();
        let data = out.params().get("w").unwrap().data();
        assert!(data[0] >= -1.0 && data[0] <= 3.0);
        assert!(data[1] >= -2.0 && data[1] <= 5.0);
    }

    #[test]
    fn grad_step_at_zero_eta_bit_equals_plain_average() {
        let a = ckpt(1, &[0.5, -0.25], Some(&[1.0, -2.0]));
        let b = ckpt(2, &[1.5, 0.75], Some(&[-0.5, 0.5]));
        let w = WeightVector::new(vec![0.4, 0.6]).unwrap();
        let plain = weighted_average(&[a.clone(), b.clone()], &w).unwrap();
        let stepped =
            gradient_step_average(&[a, b], &w, GradStepConfig::new(0.0).unwrap()).unwrap();
        let pa = plain.params().get("w").unwrap().data();
        let pb = stepped.params().get("w").unwrap().data();
        assert_eq!(
            pa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            pb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn grad_step_hand_value() {
        // params [1.0], grad [0.5], eta = 2 lands on [0.0].
        let c = ckpt(1, &[1.0], Some(&[0.5]));
        let out = gradient_step_average(
            &[c],
            &WeightVector::new(vec![1.0]).unwrap(),
            GradStepConfig::new(2.0).unwrap(),
        )
        .unwrap();
        assert_eq!(out.params().get("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn grad_step_displacement_scales_linearly_in_eta() {
        let a = ckpt(1, &[0.8, -0.3], Some(&[0.2, -0.1]));
        let b = ckpt(2, &[0.4, 0.9], Some(&[-0.3, 0.4]));
        let w = uniform_weights(2).unwrap();
        let base = weighted_average(&[a.clone(), b.clone()], &w).unwrap();
        let s1 = gradient_step_average(
            &[a.clone(), b.clone()],
            &w,
            GradStepConfig::new(0.5).unwrap(),
        )
        .unwrap();
        let s2 = gradient_step_average(&[a, b], &w, GradStepConfig::new(1.5).unwrap()).unwrap();
        let d0 = base.params().get("w").unwrap().data();
        let d1 = s1.params().get("w").unwrap().data();
        let d2 = s2.params().get("w").unwrap().data();
        for i in 0..2 {
            let disp1 = (d1[i] - d0[i]) as f64;
            let disp2 = (d2[i] - d0[i]) as f64;
            assert!((disp2 - 3.0 * disp1).abs() < 1e-6, "{disp1} vs {disp2}");
        }
    }

    #[test]
    fn grad_step_requires_gradients_everywhere() {
        let a = ckpt(1, &[1.0], Some(&[0.1]));
        let b = ckpt(2, &[2.0], None);
        let err = gradient_step_average(
            &[a, b],
            &uniform_weights(2).unwrap(),
            GradStepConfig::new(0.1).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::GradRequired { index: 1 }));
    }

    #[test]
    fn weight_length_must_match_checkpoints() {
        let a = ckpt(1, &[1.0], None);
        let err = weighted_average(&[a], &uniform_weights(2).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InvalidWeights(_)));
    }

    #[test]
    fn unnormalized_weights_renormalize_within_tolerance() {
        let w = WeightVector::from_unnormalized(vec![0.5, 0.5000000001], 1e-9).unwrap();
        assert!((kahan_sum(w.as_slice()) - 1.0).abs() <= WEIGHT_SUM_TOL);
        assert!(WeightVector::from_unnormalized(vec![0.5, 0.6], 1e-9).is_err());
        assert!(WeightVector::from_unnormalized(vec![0.5, -0.5], 1e-9).is_err());
    }
}
