//! Learnable layers with exact analytic gradients.
//!
//! Every layer follows the same contract: `forward(&self, ..)` is pure and
//! returns the output together with a tape holding what the backward pass
//! needs; `backward(&mut self, tape, dy)` returns the input gradient and adds
//! parameter gradients into [`Param::grad`]. A tape can only be produced by a
//! forward call, so backward can never run without its matching forward.

mod conv;
mod dropout;
mod linear;
mod lstm;
mod optim;
mod pool;

pub use conv::{Conv2d, ConvTape};
pub use dropout::{Dropout, DropoutTape};
pub use linear::{Linear, LinearTape};
pub use lstm::{BiLstm, BiLstmTape, LstmCell, LstmSequenceTape, LstmState, LstmStepTape, RnnFusion};
pub use optim::{plateau_lr, Adam, AdamConfig, PlateauScheduler};
pub use pool::{avg_pool2, avg_pool2_backward, global_avg_pool, global_avg_pool_backward};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Tensor};

/// A learnable tensor, its accumulated gradient, and its learning-rate
/// multiplier relative to the global rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub lr_scale: f64,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad, lr_scale: 1.0 }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Forward-pass mode. Dropout is active only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given its output `y`.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    y.zip_map(dy, |a, g| if a > T::zero() { g } else { T::zero() })
}

/// Fan-in scaled normal initialization, std = sqrt(2 / fan_in).
pub(crate) fn he_normal<T: Real, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}

pub(crate) fn uniform<T: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound)))
}
