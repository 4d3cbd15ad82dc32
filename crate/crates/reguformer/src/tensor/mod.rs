//! Dense `f64` tensors and reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a row-major buffer plus shape. Differentiable programs are
//! built on a [`Tape`](tape::Tape): leaves are pushed with
//! [`Tape::leaf`](tape::Tape::leaf), operations append nodes, and
//! [`Tape::backward`](tape::Tape::backward) runs the reverse sweep. The tape
//! is rebuilt for every training step.

pub mod kernels;
pub mod rng;
pub mod tape;

pub use rng::Rng;
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Dense n-dimensional array of 64-bit floats in row-major order.
///
/// `grad` is populated by the tape's backward sweep for every tensor with
/// `requires_grad` that the loss reaches.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape {
                op: "Tensor::new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor {
            shape: vec![rows.len(), cols],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Mark as a trainable parameter.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Extents as `(rows, cols)`, treating rank-1 as a single row.
    pub fn as_2d(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.numel() / cols, cols)
            }
        }
    }

    /// Zero an existing gradient buffer, or leave it absent.
    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
