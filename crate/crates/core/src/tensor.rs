//! Dense multi-dimensional arrays of 64-bit floats, stored flat in row-major
//! order. `TensorValue` is the unit of all computation in this crate.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Named collection of tensors with deterministic (insertion) order.
pub type TensorMap = IndexMap<String, TensorValue>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements but {actual} were provided")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} contains a zero dimension")]
    ZeroDim(Vec<usize>),
}

/// A dense tensor: shape metadata plus a flat row-major `f64` buffer.
///
/// Immutable by convention once it enters a tape; all operations produce
/// fresh values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorValue {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorValue {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(TensorValue { shape, data })
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        TensorValue {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Rank-1 tensor from a flat vector.
    pub fn vector(data: Vec<f64>) -> Self {
        TensorValue {
            shape: vec![data.len()],
            data,
        }
    }

    /// Rank-2 tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        TensorValue::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        TensorValue {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        TensorValue {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar (or one-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Size of the last axis; 1 for rank-0 tensors.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when the tensor is viewed as `[numel / last_dim, last_dim]`.
    pub fn leading_rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Frobenius norm (plain Euclidean norm of the flat buffer).
    pub fn frob_norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    /// Elementwise sum with another tensor of identical shape.
    pub fn add(&self, other: &TensorValue) -> TensorValue {
        debug_assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a + b)
            .collect();
        TensorValue {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Elementwise difference with another tensor of identical shape.
    pub fn sub(&self, other: &TensorValue) -> TensorValue {
        debug_assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        TensorValue {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn scale(&self, factor: f64) -> TensorValue {
        TensorValue {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}
