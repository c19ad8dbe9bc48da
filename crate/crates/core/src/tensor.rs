//! Dense row-major f32 tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 5;

/// Row-major f32 array with an explicit shape of rank 1 to 5.
///
/// Every constructor checks `product(shape) == data.len()` and that all
/// values are finite, so any `Tensor` a caller holds satisfies both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(shape.to_vec()))
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Tensor { shape, data })
    }

    /// Constructor for data produced by the crate's own kernels.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(check_shape(&shape).ok(), Some(data.len()));
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("fill value"));
        }
        Ok(Tensor {
            shape,
            data: vec![value; n],
        })
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        Tensor::new(shape, (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if check_shape(&shape)? != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Applies `f` elementwise; rejects non-finite results.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Spatial shape of a channel-first image or volume (drops dim 0).
    pub fn spatial_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    /// One channel of a channel-first tensor as a slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n: usize = self.shape[1..].iter().product();
        &self.data[c * n..(c + 1) * n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::zeros(vec![]).is_err());
        assert!(Tensor::zeros(vec![1, 0]).is_err());
        assert!(Tensor::zeros(vec![1; 6]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f32::NAN]),
            Err(Error::NonFinite(_))
        ));
        let t = Tensor::full(vec![2], 1.0).unwrap();
        assert!(t.map(|v| v / 0.0).is_err());
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::from_fn(vec![2, 3, 4], |i| i as f32).unwrap();
        assert_eq!(t.strides(), vec![12, 4, 1]);
        assert_eq!(t.get(&[1, 2, 3]), 23.0);
        assert_eq!(t.channel(1)[0], 12.0);
    }
}
