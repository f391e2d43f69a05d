use std::f64::consts::PI;

use crate::linalg::Matrix;

/// Heavy-ball SGD over a whole parameter matrix:
/// `buf = momentum * buf + grad; param -= lr * buf`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    momentum: f64,
    buffer: Matrix,
    started: bool,
}

impl SgdMomentum {
    pub fn new(rows: usize, cols: usize, momentum: f64) -> Self {
        Self {
            momentum,
            buffer: Matrix::zeros(rows, cols),
            started: false,
        }
    }

    pub fn step(&mut self, params: &mut Matrix, grad: &Matrix, lr: f64) {
        debug_assert_eq!(params.data().len(), grad.data().len());
        let mu = if self.started { self.momentum } else { 0.0 };
        self.started = true;
        for ((p, b), g) in params
            .data_mut()
            .iter_mut()
            .zip(self.buffer.data_mut())
            .zip(grad.data())
        {
            *b = mu * *b + g;
            *p -= lr * *b;
        }
    }
}

/// Cosine decay from `base` at `t = 0` towards 0 at `t = total`, no warmup.
pub fn cosine_lr(base: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos())
}
