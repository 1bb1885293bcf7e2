//! Adam with decoupled weight decay, and a reduce-on-plateau scheduler.

use alloc::vec;
use alloc::vec::Vec;

use super::{NamedTensor, Scalar};
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, weight_decay: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step_count: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[NamedTensor<T>]) -> Self {
        let zeros = |p: &NamedTensor<T>| vec![T::zero(); p.tensor.len()];
        Self {
            config,
            step_count: 0,
            first_moment: params.iter().map(zeros).collect(),
            second_moment: params.iter().map(zeros).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// One update: `θ ← θ − lr·wd·θ`, then the bias-corrected Adam step.
    ///
    /// All gradients are checked before any parameter is touched.
    pub fn step(&mut self, params: &mut [NamedTensor<T>], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            bail!(Dimension, "adam: {} params, {} grads, {} moments", params.len(), grads.len(), self.first_moment.len());
        }
        for (p, g) in params.iter().zip(grads) {
            if p.tensor.len() != g.len() {
                bail!(Dimension, "adam: gradient of '{}' has {} values, expected {}", p.name, g.len(), p.tensor.len());
            }
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                bail!(Training, "non-finite gradient {:?} for parameter '{}'", bad, p.name);
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count;
        let lr = T::lit(c.learning_rate);
        let decay = T::lit(c.learning_rate * c.weight_decay);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::one() - T::lit(libm::pow(c.beta1, t as f64));
        let bc2 = T::one() - T::lit(libm::pow(c.beta2, t as f64));
        let eps = T::lit(c.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for (((theta, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *theta -= decay * *theta;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without strict improvement of the monitored loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub best_loss: f64,
    pub stale_count: usize,
    learning_rate: f64,
}

impl PlateauScheduler {
    pub fn new(learning_rate: f64, patience: usize, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            bail!(Parameter, "scheduler factor {} outside (0, 1)", factor);
        }
        if !(learning_rate > 0.0) {
            bail!(Parameter, "learning rate must be positive, got {}", learning_rate);
        }
        Ok(Self { patience, factor, best_loss: f64::INFINITY, stale_count: 0, learning_rate })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Records one validation loss and returns the (possibly decayed) rate.
    pub fn step(&mut self, val_loss: f64) -> Result<f64> {
        if !val_loss.is_finite() {
            bail!(NonFinite, "validation loss {} passed to scheduler", val_loss);
        }
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.stale_count = 0;
        } else {
            self.stale_count += 1;
        }
        if self.stale_count >= self.patience {
            self.learning_rate *= self.factor;
            self.stale_count = 0;
        }
        Ok(self.learning_rate)
    }
}
