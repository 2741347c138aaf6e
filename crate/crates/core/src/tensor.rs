//! Dense tensors and ordered name -> tensor maps.
//!
//! A [`Tensor`] is a shape plus a flat row-major buffer. A [`TensorMap`]
//! holds named tensors and always iterates in lexicographic name order,
//! which is what makes downstream accumulation and serialization
//! deterministic.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Dense row-major tensor over a scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    /// Builds a tensor, checking that the shape is positive and matches
    /// the data length. An empty shape denotes a scalar (1 element).
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeDataMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::new(shape, vec![F::zero(); n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Elementwise conversion to another scalar type.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| G::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    /// Flat index of the first non-finite element, if any.
    pub fn first_nonfinite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

/// Named tensors with lexicographic iteration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorMap<F> {
    entries: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> TensorMap<F> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Inserts a tensor; rejects duplicate names.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateTensor(name));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tensor names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// (name, tensor) pairs in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn cast<G: Scalar>(&self) -> TensorMap<G> {
        TensorMap {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Total element count across all tensors.
    pub fn num_elements(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Checks that `other` has exactly the same names and shapes.
    /// `index` only labels the error message.
    pub fn check_same_layout(&self, other: &TensorMap<F>, index: usize) -> Result<()> {
        for name in self.names() {
            match other.get(name) {
                None => {
                    return Err(Error::MissingTensor {
                        name: name.to_string(),
                        index,
                    })
                }
                Some(t) if t.shape() != self.get(name).unwrap().shape() => {
                    return Err(Error::ShapeMismatch {
                        name: name.to_string(),
                        index,
                        found: t.shape().to_vec(),
                        expected: self.get(name).unwrap().shape().to_vec(),
                    });
                }
                _ => {}
            }
        }
        for name in other.names() {
            if self.get(name).is_none() {
                return Err(Error::MissingTensor {
                    name: name.to_string(),
                    index,
                });
            }
        }
        Ok(())
    }

    /// Flat dot product over all tensors, accumulated in f64 in
    /// lexicographic name order, then element order.
    pub fn dot(&self, other: &TensorMap<F>) -> Result<f64> {
        self.check_same_layout(other, 1)?;
        let mut acc = 0.0f64;
        for (name, a) in self.iter() {
            let b = other.get(name).unwrap();
            for (&x, &y) in a.data().iter().zip(b.data()) {
                acc += x.as_f64() * y.as_f64();
            }
        }
        Ok(acc)
    }
}

impl<F: Scalar> FromIterator<(String, Tensor<F>)> for TensorMap<F> {
    fn from_iter<T: IntoIterator<Item = (String, Tensor<F>)>>(iter: T) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shape_data_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![1.0f32; 5]).unwrap_err();
        assert!(matches!(err, Error::ShapeDataMismatch { .. }));
    }

    #[test]
    fn rejects_zero_dimension() {
        let err = Tensor::<f32>::new(vec![2, 0], vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidShape { .. }));
    }

    #[test]
    fn empty_shape_is_scalar() {
        let t = Tensor::new(vec![], vec![3.5f64]).unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn map_iterates_lexicographically_regardless_of_insertion_order() {
        let mut m = TensorMap::new();
        m.insert("w2", Tensor::new(vec![1], vec![1.0f32]).unwrap())
            .unwrap();
        m.insert("b1", Tensor::new(vec![1], vec![2.0f32]).unwrap())
            .unwrap();
        m.insert("a0", Tensor::new(vec![1], vec![3.0f32]).unwrap())
            .unwrap();
        let names: Vec<_> = m.names().collect();
        assert_eq!(names, vec!["a0", "b1", "w2"]);
    }

    #[test]
    fn map_rejects_duplicate_names() {
        let mut m = TensorMap::new();
        m.insert("w", Tensor::new(vec![1], vec![0.0f32]).unwrap())
            .unwrap();
        let err = m
            .insert("w", Tensor::new(vec![1], vec![0.0f32]).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateTensor(_)));
    }

    #[test]
    fn layout_check_names_the_offender() {
        let mut a = TensorMap::new();
        a.insert("w", Tensor::new(vec![2], vec![0.0f32; 2]).unwrap())
            .unwrap();
        a.insert("b", Tensor::new(vec![3], vec![0.0f32; 3]).unwrap())
            .unwrap();
        let mut b = TensorMap::new();
        b.insert("w", Tensor::new(vec![2], vec![0.0f32; 2]).unwrap())
            .unwrap();
        let err = a.check_same_layout(&b, 1).unwrap_err();
        match err {
            Error::MissingTensor { name, index } => {
                assert_eq!(name, "b");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn cast_roundtrip_f32_f64_is_exact() {
        let t = Tensor::new(vec![3], vec![1.5f32, -2.25, 0.0]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }

    #[test]
    fn dot_is_flat_inner_product() {
        let mut a = TensorMap::new();
        a.insert("x", Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap())
            .unwrap();
        let mut b = TensorMap::new();
        b.insert("x", Tensor::new(vec![2], vec![3.0f64, 4.0]).unwrap())
            .unwrap();
        assert_eq!(a.dot(&b).unwrap(), 11.0);
    }
}
