use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::Params;
use crate::real::{c, Real};

/// Affine map `x W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform(-a, a) weights with `a = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        Linear {
            weight: Array2::from_shape_fn((input, output), |_| c(rng.random_range(-a..a))),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns `(parameter gradient, input gradient)`.
    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>) -> (Linear<T>, Array2<T>) {
        let grad = Linear {
            weight: x.t().dot(&dy),
            bias: dy.sum_axis(Axis(0)),
        };
        (grad, dy.dot(&self.weight.t()))
    }

    /// Gradient of the input only.
    pub fn backward_input(&self, dy: ArrayView2<T>) -> Array2<T> {
        dy.dot(&self.weight.t())
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.input_dim(), self.output_dim())
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.mapv(|v| c(v.to_f64())),
            bias: self.bias.mapv(|v| c(v.to_f64())),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| *v == T::zero())
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn params(&self, prefix: &str) -> Vec<(String, &[T])> {
        vec![
            (format!("{prefix}.weight"), self.weight.as_slice().unwrap()),
            (format!("{prefix}.bias"), self.bias.as_slice().unwrap()),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.weight.as_slice_mut().unwrap(), self.bias.as_slice_mut().unwrap()]
    }
}
