//! Two-layer tanh classifier with analytic loss and gradient.
//!
//! Parameters are the tensors W1 [hidden, input], b1 [hidden],
//! W2 [classes, hidden], b2 [classes]. The loss is mean cross-entropy;
//! dev perplexity is its exponential. Gradients are hand-derived
//! backpropagation so finite differences can serve as an independent
//! oracle.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::num::{softmax_stable, Scalar};
use crate::objective::DevObjective;
use crate::tensor::{Tensor, TensorMap};

use super::{DevSet, ToyModelSpec};

/// Borrowed view of the four parameter tensors with validated shapes.
struct MlpView<'a, F> {
    input: usize,
    hidden: usize,
    classes: usize,
    w1: &'a [F],
    b1: &'a [F],
    w2: &'a [F],
    b2: &'a [F],
}

impl<'a, F: Scalar> MlpView<'a, F> {
    fn from_params(params: &'a TensorMap<F>) -> Result<Self> {
        let get = |name: &str| {
            params.get(name).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "model parameters must contain tensor \"{name}\" (expected W1, b1, W2, b2)"
                ))
            })
        };
        let w1 = get("W1")?;
        let b1 = get("b1")?;
        let w2 = get("W2")?;
        let b2 = get("b2")?;
        if w1.shape().len() != 2 || w2.shape().len() != 2 {
            return Err(Error::InvalidConfig(
                "W1 and W2 must be 2-d matrices".into(),
            ));
        }
        let (hidden, input) = (w1.shape()[0], w1.shape()[1]);
        let classes = w2.shape()[0];
        if w2.shape()[1] != hidden || b1.shape() != [hidden] || b2.shape() != [classes] {
            return Err(Error::InvalidConfig(format!(
                "inconsistent parameter shapes: W1 {:?}, b1 {:?}, W2 {:?}, b2 {:?}",
                w1.shape(),
                b1.shape(),
                w2.shape(),
                b2.shape()
            )));
        }
        if params.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "expected exactly 4 parameter tensors, got {}",
                params.len()
            )));
        }
        Ok(Self {
            input,
            hidden,
            classes,
            w1: w1.data(),
            b1: b1.data(),
            w2: w2.data(),
            b2: b2.data(),
        })
    }

    fn check_data(&self, data: &DevSet) -> Result<()> {
        if data.input_dim() != self.input {
            return Err(Error::InvalidDataset(format!(
                "data has input width {}, model expects {}",
                data.input_dim(),
                self.input
            )));
        }
        if let Some(&l) = data.labels().iter().find(|&&l| l >= self.classes) {
            return Err(Error::InvalidDataset(format!(
                "label {l} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    /// Fills `h` with tanh(W1 x + b1) and `logits` with W2 h + b2.
    fn activations(&self, row: &[f64], h: &mut [F], logits: &mut [F]) {
        for (i, hv) in h.iter_mut().enumerate() {
            let mut z = self.b1[i];
            let wrow = &self.w1[i * self.input..(i + 1) * self.input];
            for (w, &x) in wrow.iter().zip(row) {
                z += *w * F::from_f64_lossy(x);
            }
            *hv = z.tanh();
        }
        for (c, logit) in logits.iter_mut().enumerate() {
            let mut z = self.b2[c];
            let wrow = &self.w2[c * self.hidden..(c + 1) * self.hidden];
            for (w, &hv) in wrow.iter().zip(h.iter()) {
                z += *w * hv;
            }
            *logit = z;
        }
    }
}

fn log_sum_exp<F: Scalar>(logits: &[F]) -> F {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let sum: F = logits.iter().map(|&g| (g - max).exp()).sum();
    max + sum.ln()
}

/// Glorot-uniform weights, zero biases, deterministic in the seed.
pub fn init_params<F: Scalar>(spec: &ToyModelSpec, seed: u64) -> TensorMap<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n: usize, a: f64| -> Vec<F> {
        (0..n)
            .map(|_| F::from_f64_lossy(rng.random::<f64>() * 2.0 * a - a))
            .collect()
    };

    let a1 = (6.0 / (spec.input_dim + spec.hidden_dim) as f64).sqrt();
    let w1 = uniform(spec.hidden_dim * spec.input_dim, a1);
    let a2 = (6.0 / (spec.hidden_dim + spec.num_classes) as f64).sqrt();
    let w2 = uniform(spec.num_classes * spec.hidden_dim, a2);

    let mut params = TensorMap::new();
    params
        .insert(
            "W1",
            Tensor::new(vec![spec.hidden_dim, spec.input_dim], w1).unwrap(),
        )
        .unwrap();
    params
        .insert(
            "b1",
            Tensor::new(vec![spec.hidden_dim], vec![F::zero(); spec.hidden_dim]).unwrap(),
        )
        .unwrap();
    params
        .insert(
            "W2",
            Tensor::new(vec![spec.num_classes, spec.hidden_dim], w2).unwrap(),
        )
        .unwrap();
    params
        .insert(
            "b2",
            Tensor::new(vec![spec.num_classes], vec![F::zero(); spec.num_classes]).unwrap(),
        )
        .unwrap();
    params
}

/// Mean cross-entropy over the dataset and its exponential (DevPpl).
pub fn forward_loss<F: Scalar>(params: &TensorMap<F>, data: &DevSet) -> Result<(f64, f64)> {
    let view = MlpView::from_params(params)?;
    view.check_data(data)?;

    let mut h = vec![F::zero(); view.hidden];
    let mut logits = vec![F::zero(); view.classes];
    let mut total = 0.0f64;
    for i in 0..data.len() {
        view.activations(data.row(i), &mut h, &mut logits);
        let lse = log_sum_exp(&logits);
        total += (lse - logits[data.labels()[i]]).as_f64();
    }
    let loss = total / data.len() as f64;
    Ok((loss, loss.exp()))
}

/// Analytic gradient of the mean cross-entropy w.r.t. every parameter.
pub fn grad_params<F: Scalar>(params: &TensorMap<F>, batch: &DevSet) -> Result<TensorMap<F>> {
    let view = MlpView::from_params(params)?;
    view.check_data(batch)?;

    let mut dw1 = vec![F::zero(); view.hidden * view.input];
    let mut db1 = vec![F::zero(); view.hidden];
    let mut dw2 = vec![F::zero(); view.classes * view.hidden];
    let mut db2 = vec![F::zero(); view.classes];

    let mut h = vec![F::zero(); view.hidden];
    let mut logits = vec![F::zero(); view.classes];
    for i in 0..batch.len() {
        let row = batch.row(i);
        view.activations(row, &mut h, &mut logits);
        let mut dlogits = softmax_stable(&logits);
        dlogits[batch.labels()[i]] -= F::one();

        for (c, &dl) in dlogits.iter().enumerate() {
            db2[c] += dl;
            let drow = &mut dw2[c * view.hidden..(c + 1) * view.hidden];
            for (d, &hv) in drow.iter_mut().zip(h.iter()) {
                *d += dl * hv;
            }
        }
        for j in 0..view.hidden {
            let mut dh = F::zero();
            for (c, &dl) in dlogits.iter().enumerate() {
                dh += view.w2[c * view.hidden + j] * dl;
            }
            let dz = dh * (F::one() - h[j] * h[j]);
            db1[j] += dz;
            let drow = &mut dw1[j * view.input..(j + 1) * view.input];
            for (d, &x) in drow.iter_mut().zip(row) {
                *d += dz * F::from_f64_lossy(x);
            }
        }
    }

    let n = F::from_f64_lossy(batch.len() as f64);
    for buf in [&mut dw1, &mut db1, &mut dw2, &mut db2] {
        for v in buf.iter_mut() {
            *v /= n;
        }
    }

    let mut grads = TensorMap::new();
    grads.insert("W1", Tensor::new(vec![view.hidden, view.input], dw1)?)?;
    grads.insert("b1", Tensor::new(vec![view.hidden], db1)?)?;
    grads.insert("W2", Tensor::new(vec![view.classes, view.hidden], dw2)?)?;
    grads.insert("b2", Tensor::new(vec![view.classes], db2)?)?;
    Ok(grads)
}

/// Fraction of examples whose argmax logit matches the label.
pub fn accuracy(params: &TensorMap<f64>, data: &DevSet) -> Result<f64> {
    let view = MlpView::from_params(params)?;
    view.check_data(data)?;
    let mut h = vec![0.0f64; view.hidden];
    let mut logits = vec![0.0f64; view.classes];
    let mut hits = 0usize;
    for i in 0..data.len() {
        view.activations(data.row(i), &mut h, &mut logits);
        let mut best = 0usize;
        for c in 1..view.classes {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        if best == data.labels()[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// The classifier's dev loss as a [`DevObjective`].
pub struct MlpObjective<'a> {
    spec: ToyModelSpec,
    dev: &'a DevSet,
}

impl<'a> MlpObjective<'a> {
    pub fn new(spec: ToyModelSpec, dev: &'a DevSet) -> Result<Self> {
        spec.validate()?;
        if dev.input_dim() != spec.input_dim {
            return Err(Error::InvalidDataset(format!(
                "dev data width {} does not match spec input_dim {}",
                dev.input_dim(),
                spec.input_dim
            )));
        }
        if let Some(&l) = dev.labels().iter().find(|&&l| l >= spec.num_classes) {
            return Err(Error::InvalidDataset(format!(
                "dev label {l} out of range for {} classes",
                spec.num_classes
            )));
        }
        Ok(Self { spec, dev })
    }

    pub fn spec(&self) -> &ToyModelSpec {
        &self.spec
    }

    pub fn dev(&self) -> &DevSet {
        self.dev
    }

    fn check_shapes(&self, params: &TensorMap<f64>) -> Result<()> {
        let view = MlpView::from_params(params)?;
        if view.input != self.spec.input_dim
            || view.hidden != self.spec.hidden_dim
            || view.classes != self.spec.num_classes
        {
            return Err(Error::InvalidConfig(format!(
                "parameter shapes ({}, {}, {}) do not match spec {:?}",
                view.input, view.hidden, view.classes, self.spec
            )));
        }
        Ok(())
    }
}

impl DevObjective for MlpObjective<'_> {
    fn loss(&self, params: &TensorMap<f64>) -> Result<f64> {
        self.check_shapes(params)?;
        forward_loss(params, self.dev).map(|(loss, _)| loss)
    }

    fn grad(&self, params: &TensorMap<f64>) -> Result<TensorMap<f64>> {
        self.check_shapes(params)?;
        grad_params(params, self.dev)
    }
}
