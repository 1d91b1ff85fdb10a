//! Minimal reverse-mode differentiable arrays.
//!
//! [`Tensor`] is a plain row-major `f64` buffer with a shape. A [`Graph`] is a
//! define-by-run tape: every operation appends a node, and [`Graph::backward`]
//! walks the tape in reverse, so node order is already a topological order.

mod adam;
mod conv;
mod graph;
pub mod gradcheck;
pub mod init;

pub use adam::{lr_decay, AdamConfig, AdamState};
pub use graph::{sigmoid, Graph, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                axis: "numel",
                expected: n,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                axis: "numel",
                expected: self.data.len(),
                got: n,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Item of a scalar (or single-element) tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }
}
