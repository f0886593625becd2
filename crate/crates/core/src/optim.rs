//! SGD with momentum and step-decay learning-rate schedules.

/// Heavy-ball SGD: `v <- mu * v + g`, `theta <- theta - lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(len: usize, lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// Multiplies a rate by `factor` every `every` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub factor: f64,
    pub every: usize,
}

impl StepDecay {
    /// New rate after finishing `iteration` (1-based count of completed iterations).
    pub fn apply(&self, rate: f64, iteration: usize) -> f64 {
        if self.every > 0 && iteration > 0 && iteration % self.every == 0 {
            rate * self.factor
        } else {
            rate
        }
    }
}
