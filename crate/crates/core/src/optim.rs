//! Adam over flat parameter buffers.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update over buffers laid end to end.
    pub fn step<T: Real>(&mut self, buffers: &mut [&mut Vec<T>], grads: &[&[T]]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut offset = 0;
        for (buf, g) in buffers.iter_mut().zip(grads) {
            assert_eq!(buf.len(), g.len(), "parameter/gradient length mismatch");
            for (i, (p, &gi)) in buf.iter_mut().zip(g.iter()).enumerate() {
                let gi = gi.to_f64_lossy();
                let k = offset + i;
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gi;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (self.m[k] / bc1) / ((self.v[k] / bc2).sqrt() + self.eps);
                *p -= T::lit(update);
            }
            offset += buf.len();
        }
        assert_eq!(offset, self.m.len(), "optimizer state length mismatch");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(0.01, 2);
        let mut p = vec![1.0f64, -1.0];
        opt.step(&mut [&mut p], &[&[3.0, -0.5]]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::new(0.05, 1);
        let mut p = vec![3.0f64];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            opt.step(&mut [&mut p], &[&g]);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
