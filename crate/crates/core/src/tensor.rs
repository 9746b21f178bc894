//! Dense row-major `f32` storage used for frame payloads and region masks.
//!
//! Model computation happens in `f64` ndarray arrays; `Tensor` is the
//! interchange container that is written to and read from disk.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape matches the data length and
    /// that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {pos}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &dim) in index.iter().zip(&self.shape) {
            if i >= dim {
                return None;
            }
            off = off * dim + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<f32> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn view2(&self) -> Result<ArrayView2<'_, f32>> {
        match self.shape[..] {
            [h, w] => Ok(ArrayView2::from_shape((h, w), &self.data).expect("checked shape")),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn view3(&self) -> Result<ArrayView3<'_, f32>> {
        match self.shape[..] {
            [h, w, c] => Ok(ArrayView3::from_shape((h, w, c), &self.data).expect("checked shape")),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Widens a rank-3 tensor to `f64` for model computation.
    pub fn to_f64_3(&self) -> Result<Array3<f64>> {
        Ok(self.view3()?.mapv(f64::from))
    }

    pub fn from_array2(a: &Array2<f32>) -> Result<Self> {
        let (h, w) = a.dim();
        Self::new(vec![h, w], a.iter().copied().collect())
    }

    pub fn from_array3(a: &Array3<f32>) -> Result<Self> {
        let (h, w, c) = a.dim();
        Self::new(vec![h, w, c], a.iter().copied().collect())
    }
}
