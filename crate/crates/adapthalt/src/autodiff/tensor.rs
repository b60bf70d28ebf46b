//! Dense row-major `f64` tensors plus the scalar kernels shared by the graph
//! executor and the plain (no-recording) inference path. Keeping one kernel
//! per operation is what makes recorded and unrecorded forward passes
//! bit-identical.

use crate::error::{Error, Result};

/// Values below this are clamped before taking a natural log.
pub const LOG_CLAMP: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        debug_assert!(t.check_finite("Tensor::new").is_ok());
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    /// A scalar is a rank-1 tensor of length 1 throughout this crate.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a length-1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    /// Rejects NaN/Inf entries. Called from verification paths and wherever a
    /// non-finite value must abort with a diagnostic rather than propagate.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::non_finite(format!(
                    "{context}: entry {i} of shape {:?} is {v}",
                    self.shape
                )));
            }
        }
        Ok(())
    }
}

// ── Shared kernels ───────────────────────────────────────────────────────

/// out = W x for row-major W of `rows` x `cols`.
pub(crate) fn matvec_into(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x.iter()) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max-subtraction.
pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(x.iter()) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn ln_clamped(x: f64) -> f64 {
    x.max(LOG_CLAMP).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_data_len() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn check_finite_rejects_nan_and_inf() {
        let t = Tensor::vector(vec![1.0, f64::NAN]);
        assert!(t.check_finite("test").is_err());
        let t = Tensor::vector(vec![f64::INFINITY]);
        assert!(t.check_finite("test").is_err());
        let t = Tensor::vector(vec![1.0, -2.0]);
        assert!(t.check_finite("test").is_ok());
    }

    #[test]
    fn sigmoid_matches_definition_on_both_branches() {
        assert_eq!(sigmoid(0.0), 0.5);
        let x = 3.7;
        assert!((sigmoid(x) - 1.0 / (1.0 + (-x).exp())).abs() < 1e-15);
        assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        // No overflow at extremes.
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn softmax_handles_large_logits() {
        let mut out = vec![0.0; 2];
        softmax_into(&[1000.0, 1000.0], &mut out);
        assert_eq!(out, vec![0.5, 0.5]);
    }
}
