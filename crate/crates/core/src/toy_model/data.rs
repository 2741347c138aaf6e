//! Development/training data and its container serialization.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::store::{self, Checkpoint, CheckpointMeta};
use crate::tensor::{Tensor, TensorMap};

use super::ToyModelSpec;

/// Fraction of synthetic examples whose label is resampled uniformly.
const LABEL_NOISE: f64 = 0.05;

/// Labeled examples: a dense input matrix and one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DevSet {
    inputs: Tensor<f64>,
    labels: Vec<usize>,
}

impl DevSet {
    /// `inputs` must be a [n, input_dim] matrix with one label per row.
    pub fn new(inputs: Tensor<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::InvalidDataset(format!(
                "inputs must be 2-d, got shape {:?}",
                inputs.shape()
            )));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} input rows but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidDataset("dataset is empty".into()));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn inputs(&self) -> &Tensor<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.inputs.data()[i * d..(i + 1) * d]
    }

    /// Splits into a head of `n_head` rows and the remaining tail.
    /// Both halves keep the labeling rule of the source, which is what
    /// makes a train/dev pair out of one synthetic draw.
    pub fn split(&self, n_head: usize) -> Result<(Self, Self)> {
        if n_head == 0 || n_head >= self.len() {
            return Err(Error::InvalidDataset(format!(
                "cannot split {} rows at {n_head}: both halves must be non-empty",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..n_head).collect();
        let tail: Vec<usize> = (n_head..self.len()).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }

    /// Copies the given rows into a new dataset, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(Tensor::new(vec![indices.len(), d], data)?, labels)
    }

    /// Serializes to the checkpoint container with tensors "inputs" and
    /// "labels" (labels stored as f32).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut params = TensorMap::new();
        params.insert("inputs", self.inputs.cast::<f32>())?;
        let labels_f32: Vec<f32> = self.labels.iter().map(|&l| l as f32).collect();
        params.insert("labels", Tensor::new(vec![self.labels.len()], labels_f32)?)?;
        let ckpt = Checkpoint::with_params(params, CheckpointMeta::new(0, None, "dataset")?)?;
        store::write_checkpoint(path, &ckpt)
    }

    /// Reads a dataset container; labels must be non-negative integers.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = store::read_checkpoint(path)?;
        let inputs = ckpt
            .params()
            .get("inputs")
            .ok_or_else(|| Error::InvalidDataset("missing \"inputs\" tensor".into()))?;
        let labels_t = ckpt
            .params()
            .get("labels")
            .ok_or_else(|| Error::InvalidDataset("missing \"labels\" tensor".into()))?;
        let mut labels = Vec::with_capacity(labels_t.len());
        for (i, &v) in labels_t.data().iter().enumerate() {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::InvalidDataset(format!(
                    "label at index {i} is not a non-negative integer: {v}"
                )));
            }
            labels.push(v as usize);
        }
        Self::new(inputs.cast::<f64>(), labels)
    }
}

/// Draws a hidden linear map, samples normal inputs, labels them by the
/// map's argmax and relabels 5% uniformly at random. Inputs are rounded
/// to f32-representable values so that a container round-trip does not
/// change the dataset.
pub fn make_synthetic_data(spec: &ToyModelSpec, n: usize, seed: u64) -> Result<DevSet> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidDataset("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let truth: Vec<f64> = (0..spec.num_classes * spec.input_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();

    let mut data = Vec::with_capacity(n * spec.input_dim);
    for _ in 0..n * spec.input_dim {
        let x: f64 = StandardNormal.sample(&mut rng);
        data.push(x as f32 as f64);
    }

    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let row = &data[i * spec.input_dim..(i + 1) * spec.input_dim];
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..spec.num_classes {
            let score: f64 = truth[c * spec.input_dim..(c + 1) * spec.input_dim]
                .iter()
                .zip(row)
                .map(|(w, x)| w * x)
                .sum();
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        labels.push(best);
    }
    for label in labels.iter_mut() {
        if rng.random::<f64>() < LABEL_NOISE {
            *label = rng.random_range(0..spec.num_classes);
        }
    }

    DevSet::new(Tensor::new(vec![n, spec.input_dim], data)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ToyModelSpec {
        ToyModelSpec::new(4, 3, 3).unwrap()
    }

    #[test]
    fn same_seed_gives_identical_dataset() {
        let a = make_synthetic_data(&spec(), 50, 7).unwrap();
        let b = make_synthetic_data(&spec(), 50, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = make_synthetic_data(&spec(), 50, 7).unwrap();
        let b = make_synthetic_data(&spec(), 50, 8).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn labels_are_in_range() {
        let d = make_synthetic_data(&spec(), 200, 0).unwrap();
        assert!(d.labels().iter().all(|&l| l < spec().num_classes));
    }

    #[test]
    fn container_roundtrip_preserves_the_dataset() {
        let d = make_synthetic_data(&spec(), 30, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dev.ckav");
        d.save(&path).unwrap();
        let back = DevSet::load(&path).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn subset_picks_rows_in_order() {
        let d = make_synthetic_data(&spec(), 10, 1).unwrap();
        let s = d.subset(&[4, 1]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.row(0), d.row(4));
        assert_eq!(s.row(1), d.row(1));
        assert_eq!(s.labels()[1], d.labels()[1]);
    }

    #[test]
    fn fractional_labels_are_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckav");
        let mut params = TensorMap::new();
        params
            .insert(
                "inputs",
                Tensor::new(vec![1, 2], vec![0.0f32, 1.0]).unwrap(),
            )
            .unwrap();
        params
            .insert("labels", Tensor::new(vec![1], vec![0.5f32]).unwrap())
            .unwrap();
        let ckpt =
            Checkpoint::with_params(params, CheckpointMeta::new(0, None, "dataset").unwrap())
                .unwrap();
        store::write_checkpoint(&path, &ckpt).unwrap();
        assert!(matches!(
            DevSet::load(&path).unwrap_err(),
            Error::InvalidDataset(_)
        ));
    }
}
