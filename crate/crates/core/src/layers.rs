use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Fully connected layer, `y = x W^T + b` with `W: (out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        glorot_fill(layer.weight.iter_mut(), inputs, outputs, rng);
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    /// Returns `(grad_layer, grad_input)` for upstream `g: (rows, out)`.
    pub fn backward(&self, x: ArrayView2<f64>, g: ArrayView2<f64>) -> (Dense, Array2<f64>) {
        let grad = Dense {
            weight: g.t().dot(&x),
            bias: g.sum_axis(Axis(0)),
        };
        (grad, g.dot(&self.weight))
    }
}

/// Fills `values` uniformly in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_fill<'a, R: Rng>(
    values: impl Iterator<Item = &'a mut f64>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in values {
        *v = rng.random_range(-limit..limit);
    }
}
