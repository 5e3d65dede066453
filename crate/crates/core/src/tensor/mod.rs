//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Graph`] records every operation applied to its nodes in creation
//! order; [`Graph::backward`] walks them in exact reverse order. Parameters
//! live outside the graph in a [`ParamStore`] and are bound into each new
//! graph with [`Graph::param`].
//!
//! ```
//! use rdkd::tensor::Graph;
//!
//! let mut g = Graph::new();
//! let a = g.variable(&[2], vec![1.0, 2.0]).unwrap();
//! let b = g.variable(&[2], vec![3.0, 4.0]).unwrap();
//! let c = g.add(a, b).unwrap();
//! let s = g.sum(c).unwrap();
//! g.backward(s).unwrap();
//! assert_eq!(g.values(c), &[4.0, 6.0]);
//! assert_eq!(g.grad(a).unwrap(), &[1.0, 1.0]);
//! ```

mod graph;
pub(crate) mod linalg;
mod ops;
pub mod optim;
pub mod params;
mod recurrent;
mod spectral;

pub use graph::{Graph, Var};
pub use optim::{clip_global_norm, lr_schedule, lr_schedule_with, AdamW, AdamWState, ScheduleKind};
pub use params::{accumulate, GradMap, ParamStore};

use crate::error::{Error, Result};

/// Dense row-major tensor with an optional gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) values: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(format!("expected a rank-2 tensor, got shape {s:?}"))),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape.last().copied().unwrap_or(1);
        &self.values[r * c..(r + 1) * c]
    }
}
