//! Adam trainer that emits a checkpoint series with stored gradients.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{self, Checkpoint, CheckpointMeta};
use crate::tensor::TensorMap;

use super::{forward_loss, grad_params, init_params, DevSet, ToyModelSpec};

/// Adam hyperparameters and the training/checkpointing schedule.
///
/// `seed` drives parameter initialization; the shuffling stream is
/// derived from `seed + 1` so the two never share a generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            steps: 2000,
            checkpoint_every: 200,
            seed: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lr must be > 0, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in (0, 1), got {b}"
                )));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eps must be > 0, got {}",
                self.eps
            )));
        }
        if self.batch_size == 0 || self.steps == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, steps and checkpoint_every must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Canonical checkpoint filename for a training step.
pub fn checkpoint_filename(step: u64) -> String {
    format!("ckpt-{step:06}.ckav")
}

struct AdamState {
    m: TensorMap<f64>,
    v: TensorMap<f64>,
    t: u64,
}

impl AdamState {
    fn new(params: &TensorMap<f64>) -> Self {
        let zeros = |src: &TensorMap<f64>| -> TensorMap<f64> {
            let mut out = src.clone();
            for (_, t) in out.iter_mut() {
                for x in t.data_mut() {
                    *x = 0.0;
                }
            }
            out
        };
        Self {
            m: zeros(params),
            v: zeros(params),
            t: 0,
        }
    }

    /// Bias-corrected Adam update, applied tensor by tensor in name order.
    fn step(&mut self, params: &mut TensorMap<f64>, grads: &TensorMap<f64>, cfg: &AdamConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).unwrap().data();
            let m = self.m.iter_mut().find(|(n, _)| *n == name).unwrap().1;
            for (mv, &gv) in m.data_mut().iter_mut().zip(g) {
                *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            }
            let v = self.v.iter_mut().find(|(n, _)| *n == name).unwrap().1;
            for (vv, &gv) in v.data_mut().iter_mut().zip(g) {
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            }
            let m = self.m.get(name).unwrap().data();
            let v = self.v.get(name).unwrap().data();
            for ((pv, &mv), &vv) in p.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mv / bc1;
                let vhat = vv / bc2;
                *pv -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }
}

/// Trains the classifier with Adam, writing a checkpoint every
/// `checkpoint_every` steps.
///
/// Each checkpoint stores the current parameters, the gradient of the
/// most recent minibatch, and the dev perplexity of the stored (f32)
/// parameters, so a checkpoint's metadata always matches what a reader
/// of the file would measure. Returns the metadata in step order.
pub fn train_with_checkpoints(
    spec: &ToyModelSpec,
    train: &DevSet,
    dev: &DevSet,
    cfg: &AdamConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<CheckpointMeta>> {
    spec.validate()?;
    cfg.validate()?;
    if cfg.batch_size > train.len() {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} exceeds training set size {}",
            cfg.batch_size,
            train.len()
        )));
    }
    let out_dir = out_dir.as_ref();

    let mut params: TensorMap<f64> = init_params(spec, cfg.seed);
    let mut state = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let mut indices: Vec<usize> = (0..train.len()).collect();
    indices.shuffle(&mut shuffle_rng);
    let mut cursor = 0usize;

    let mut metas = Vec::new();
    for step in 1..=cfg.steps as u64 {
        if cursor + cfg.batch_size > indices.len() {
            indices.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let batch = train.subset(&indices[cursor..cursor + cfg.batch_size])?;
        cursor += cfg.batch_size;

        let grads = grad_params(&params, &batch)?;
        state.step(&mut params, &grads, cfg);

        if step % cfg.checkpoint_every as u64 == 0 {
            let params32 = params.cast::<f32>();
            let grads32 = grads.cast::<f32>();
            let (_, dev_ppl) = forward_loss(&params32.cast::<f64>(), dev)?;
            let meta = CheckpointMeta::new(step, Some(dev_ppl), "toy")?;
            let ckpt = Checkpoint::new(params32, Some(grads32), meta.clone())?;
            store::write_checkpoint(out_dir.join(checkpoint_filename(step)), &ckpt)?;
            metas.push(meta);
        }
    }
    Ok(metas)
}
