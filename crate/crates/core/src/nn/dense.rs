//! Fully connected layer `y = x W + b` on row-major batches.

use rand::Rng;

use crate::scalar::{gemm, Scalar};

use super::init::{glorot_bound, uniform};
use super::{NnError, Parameter};

/// Weights are stored `[inputs, outputs]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub weight: Parameter<F>,
    pub bias: Parameter<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Dense {
            weight: Parameter::new(uniform(&[inputs, outputs], glorot_bound(inputs, outputs), rng)),
            bias: Parameter::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn batch_of(&self, x: &[F]) -> Result<usize, NnError> {
        if x.len() % self.inputs() != 0 {
            return Err(NnError::ShapeMismatch(format!("{} values is not a batch of {}-vectors", x.len(), self.inputs())));
        }
        Ok(x.len() / self.inputs())
    }

    /// `x` is `[batch, inputs]`; returns `[batch, outputs]`.
    pub fn forward(&self, x: &[F]) -> Result<Vec<F>, NnError> {
        let batch = self.batch_of(x)?;
        let (i, o) = (self.inputs(), self.outputs());
        let mut y = Vec::with_capacity(batch * o);
        for _ in 0..batch {
            y.extend_from_slice(self.bias.value.data());
        }
        gemm(false, false, batch, o, i, F::one(), x, self.weight.value.data(), F::one(), &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &[F], grad_out: &[F]) -> Result<Vec<F>, NnError> {
        let batch = self.batch_of(x)?;
        let (i, o) = (self.inputs(), self.outputs());
        if grad_out.len() != batch * o {
            return Err(NnError::ShapeMismatch(format!("grad_out has {} values, expected {}", grad_out.len(), batch * o)));
        }
        gemm(true, false, i, o, batch, F::one(), x, grad_out, F::one(), self.weight.grad.data_mut());
        for row in grad_out.chunks_exact(o) {
            for (b, &g) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = vec![F::zero(); batch * i];
        gemm(false, true, batch, i, o, F::one(), grad_out, self.weight.value.data(), F::zero(), &mut dx);
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
