use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::real::Real;

/// Dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Structural(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(d0, d1, d2)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Structural(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::Structural(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor with its gradient and L2 coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    #[serde(skip)]
    pub grad: Option<Tensor<T>>,
    pub l2: f64,
}

impl<T: Real> Parameter<T> {
    pub fn new(value: Tensor<T>, l2: f64) -> Self {
        Parameter {
            value,
            grad: None,
            l2,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// The gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut Tensor<T> {
        let shape = self.value.shape().to_vec();
        self.grad.get_or_insert_with(|| Tensor::zeros(&shape))
    }

    /// The value alongside its (lazily allocated) gradient buffer.
    pub fn value_and_grad(&mut self) -> (&Tensor<T>, &mut Tensor<T>) {
        let value = &self.value;
        let grad = self
            .grad
            .get_or_insert_with(|| Tensor::zeros(value.shape()));
        (value, grad)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(T::zero());
        }
    }

    /// Adds the gradient of `l2 * sum(w^2)` and returns the penalty value.
    pub fn apply_l2(&mut self) -> f64 {
        if self.l2 == 0.0 {
            return 0.0;
        }
        let l2 = self.l2;
        let coef = T::of(2.0 * l2);
        let value = &self.value;
        let g = self
            .grad
            .get_or_insert_with(|| Tensor::zeros(value.shape()));
        let mut penalty = 0.0;
        for (gi, &wi) in g.data_mut().iter_mut().zip(value.data()) {
            *gi += coef * wi;
            penalty += wi.f64() * wi.f64();
        }
        l2 * penalty
    }
}
