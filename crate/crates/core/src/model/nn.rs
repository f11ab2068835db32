//! Dense layers with explicit backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Affine map `y = W x + b`, `W` stored row-major as `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Weights uniform in `[-scale, scale]`, zero bias.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let mut l = Self::zeros(rows, cols);
        for w in &mut l.weight {
            *w = rng.gen_range(-scale..scale);
        }
        l
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.weight[r * self.cols..(r + 1) * self.cols]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.bias[r] + dot(self.row(r), x))
            .collect()
    }

    /// `W x` without the bias.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// Accumulates `dW += dy x^T`, `db += dy` into `grad`.
    pub fn accumulate(&self, x: &[f64], dy: &[f64], grad: &mut Linear) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[r] += g;
            let row = &mut grad.weight[r * self.cols..(r + 1) * self.cols];
            axpy(g, x, row);
        }
    }

    /// `W^T dy`.
    pub fn transpose_apply(&self, dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for (r, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(g, self.row(r), &mut dx);
            }
        }
        dx
    }

    /// Accumulates gradients and returns `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        self.accumulate(x, dy, grad);
        self.transpose_apply(dy)
    }
}

/// Two-layer perceptron `W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    /// Hidden layer uniform in `[-scale, scale]`; output layer zero.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, out: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            hidden: Linear::uniform(hidden, input, scale, rng),
            output: Linear::zeros(out, hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    /// Returns `(hidden activations, output)`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = self.hidden.forward(x);
        h.iter_mut().for_each(|v| *v = v.tanh());
        let y = self.output.forward(&h);
        (h, y)
    }

    pub fn backward(&self, x: &[f64], h: &[f64], dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let dpre = self.backward_to_hidden(h, dy, grad);
        self.hidden.backward(x, &dpre, &mut grad.hidden)
    }

    /// Backpropagates through the output layer and the nonlinearity, returning
    /// the gradient of the hidden pre-activation.
    pub fn backward_to_hidden(&self, h: &[f64], dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let dh = self.output.backward(h, dy, &mut grad.output);
        dh.iter().zip(h).map(|(g, a)| g * (1.0 - a * a)).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
