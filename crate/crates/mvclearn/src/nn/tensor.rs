//! Dense row-major tensor with a flat backing vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                context: "tensor construction",
                expected: format!("{n} elements for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn fill(&mut self, v: E) {
        self.data.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    /// Reinterpret as `[B, C, H, W]`.
    pub fn dim4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok((b, c, h, w)),
            other => Err(Error::ShapeMismatch {
                context: "dim4",
                expected: "4-d tensor".into(),
                got: format!("{other:?}"),
            }),
        }
    }

    /// Reinterpret as `[B, D]`.
    pub fn dim2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[b, d] => Ok((b, d)),
            other => Err(Error::ShapeMismatch {
                context: "dim2",
                expected: "2-d tensor".into(),
                got: format!("{other:?}"),
            }),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                expected: format!("{} elements", self.data.len()),
                got: format!("shape {shape:?} = {n}"),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row `b` of a 2-d tensor.
    pub fn row(&self, b: usize) -> &[E] {
        let d = self.shape[self.shape.len() - 1];
        &self.data[b * d..(b + 1) * d]
    }

    /// Convert elementwise to another scalar type via f64.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}
