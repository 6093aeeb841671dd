use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-6 }
    }
}

/// Adam with bias correction and decoupled weight decay. The effective rate
/// of each parameter is `global_lr * lr_scale`; a zero scale freezes it.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub config: AdamConfig,
    pub step: u64,
    /// First and second moments, in parameter order.
    pub moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, moments: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Param<T>], global_lr: f64) -> Result<()> {
        ensure!(global_lr > 0.0 && global_lr.is_finite(), InvalidArgument, "learning rate must be positive, got {}", global_lr);
        if self.moments.is_empty() {
            self.moments = params.iter().map(|p| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape()))).collect();
        }
        ensure!(self.moments.len() == params.len(), Shape, "optimizer tracks {} params, got {}", self.moments.len(), params.len());
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.config;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            ensure!(m.shape() == p.value.shape(), Shape, "optimizer moment shape mismatch");
            ensure!(p.lr_scale >= 0.0, InvalidArgument, "negative lr_scale {}", p.lr_scale);
            let rate = global_lr * p.lr_scale;
            let grads = p.grad.data();
            for ((mi, vi), &g) in m.data_mut().iter_mut().zip(v.data_mut().iter_mut()).zip(grads) {
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
            }
            if rate == 0.0 {
                continue;
            }
            let (rate_t, decay) = (T::of(rate), T::of(rate * weight_decay));
            let (inv_c1, inv_c2) = (T::of(1.0 / c1), T::of(1.0 / c2));
            let eps_t = T::of(eps);
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = mi * inv_c1;
                let v_hat = vi * inv_c2;
                *w = *w - rate_t * m_hat / (v_hat.sqrt() + eps_t) - decay * *w;
            }
        }
        Ok(())
    }
}

/// Divides the rate by `factor` whenever `patience` epochs pass without a
/// new minimum of the monitored loss, at most `max_drops` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub max_drops: usize,
    pub drops: usize,
    best: Option<f64>,
    since_best: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64, max_drops: usize) -> Self {
        PlateauScheduler { lr, patience, factor, max_drops, drops: 0, best: None, since_best: 0 }
    }

    /// Records one epoch's loss and returns the rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(b) if loss >= b => {
                self.since_best += 1;
                if self.since_best >= self.patience && self.drops < self.max_drops {
                    self.lr /= self.factor;
                    self.drops += 1;
                    self.since_best = 0;
                }
            }
            _ => {
                self.best = Some(loss);
                self.since_best = 0;
            }
        }
        self.lr
    }
}

/// Replays a loss history through [`PlateauScheduler`].
pub fn plateau_lr(history: &[f64], lr: f64, patience: usize, factor: f64, max_drops: usize) -> f64 {
    let mut s = PlateauScheduler::new(lr, patience, factor, max_drops);
    history.iter().fold(lr, |_, &l| s.observe(l))
}
