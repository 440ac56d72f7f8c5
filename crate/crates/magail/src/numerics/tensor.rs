//! Dense row-major f64 tensor.
//!
//! Tensors are immutable after construction and cheap to clone (shared data
//! buffer), which lets the tape bind parameter leaves without copying.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense tensor of 64-bit reals, row-major.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, validating length and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("Tensor::new", format!("zero dim in {shape:?}")));
        }
        if data.len() != expected {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} wants {expected} values, got {}", data.len()),
            ));
        }
        let t = Tensor { shape, data: Arc::new(data) };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    /// All-zeros tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![0.0; n]) }
    }

    /// 1-D tensor from a value list.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    /// Scalar tensor (shape `[1]`).
    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![x]) }
    }

    /// Builds without the finiteness check; for internal kernels whose inputs
    /// are already validated. Length is still enforced.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data: Arc::new(data) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when the shape is `[1]`.
    pub fn is_scalar(&self) -> bool {
        self.shape == [1]
    }

    /// Value of a scalar tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::shape("scalar_value", format!("shape {:?} is not [1]", self.shape)))
        }
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Errors if any entry is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { context: context.to_string() })
        }
    }

    /// True when both tensors have identical shape and bit-identical data.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Maximum absolute entry (0 for the impossible empty case).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_length() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn zeros_and_scalar() {
        let z = Tensor::zeros(vec![3, 2]);
        assert_eq!(z.len(), 6);
        assert!(z.data().iter().all(|&x| x == 0.0));
        assert_eq!(Tensor::scalar(4.0).scalar_value().unwrap(), 4.0);
    }

    #[test]
    fn bit_eq_detects_sign_of_zero() {
        let a = Tensor::from_vec(vec![0.0]).unwrap();
        let b = Tensor::from_vec(vec![-0.0]).unwrap();
        assert!(!a.bit_eq(&b));
        assert!(a.bit_eq(&a.clone()));
    }
}
