//! Minimal dense layers over flat parameter vectors, plus Adam.
//!
//! Networks in this crate are tiny (tens to a few thousand weights), so every
//! model keeps its parameters in one `Vec<f64>` and addresses layers by
//! offset. Gradients use the same layout.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

/// A fully connected layer `y = W x + b` stored at `offset` in a flat vector:
/// `W` row-major (`n_out x n_in`) followed by `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub offset: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn new(offset: usize, n_in: usize, n_out: usize) -> Self {
        Self { offset, n_in, n_out }
    }

    pub fn len(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.n_out == 0
    }

    pub fn end(&self) -> usize {
        self.offset + self.len()
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.n_out * self.n_in
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        let w = &params[self.offset..self.bias_offset()];
        let b = &params[self.bias_offset()..self.end()];
        for o in 0..self.n_out {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            y[o] = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates `dL/dW`, `dL/db` into `grad` and, if requested, adds
    /// `dL/dx` into `dx`.
    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let bias = self.bias_offset();
        for o in 0..self.n_out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            let row = &mut grad[self.offset + o * self.n_in..self.offset + (o + 1) * self.n_in];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
            grad[bias + o] += g;
        }
        if let Some(dx) = dx {
            let w = &params[self.offset..bias];
            for o in 0..self.n_out {
                let g = dy[o];
                if g == 0.0 {
                    continue;
                }
                for (d, wi) in dx.iter_mut().zip(&w[o * self.n_in..(o + 1) * self.n_in]) {
                    *d += g * wi;
                }
            }
        }
    }

    /// Glorot-uniform weights scaled by `gain`, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], gain: f64, rng: &mut R) {
        let limit = gain * libm::sqrt(6.0 / (self.n_in + self.n_out) as f64);
        for w in &mut params[self.offset..self.bias_offset()] {
            *w = rng.random_range(-limit..=limit);
        }
        for b in &mut params[self.bias_offset()..self.end()] {
            *b = 0.0;
        }
    }
}

pub fn tanh_inplace(v: &mut [f64]) {
    for x in v {
        *x = libm::tanh(*x);
    }
}

/// Turns `dL/dy` into `dL/dpre` for `y = tanh(pre)` given the outputs `y`.
pub fn tanh_backward(y: &[f64], dy: &mut [f64]) {
    for (d, y) in dy.iter_mut().zip(y) {
        *d *= 1.0 - y * y;
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Forgets the moment estimates, keeping the learning rate.
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|v| *v = 0.0);
        self.v.iter_mut().for_each(|v| *v = 0.0);
        self.t = 0;
    }

    /// Moves `params` against `grad` (minimization).
    pub fn descend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.learning_rate * mh / (libm::sqrt(vh) + self.epsilon);
        }
    }
}
