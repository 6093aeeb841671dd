use rand::Rng;

use super::Mode;
use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

/// Inverted dropout: kept activations are scaled by `1 / (1 - p)` in
/// training so the expected output equals the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    p: f64,
}

#[derive(Debug, Clone)]
pub struct DropoutTape<T: Real> {
    /// Per-element multiplier (0 or 1/(1-p)); `None` when the layer was a no-op.
    scale: Option<Vec<T>>,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        ensure!((0.0..1.0).contains(&p), InvalidArgument, "dropout probability must be in [0, 1), got {}", p);
        Ok(Dropout { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn forward<T: Real, R: Rng>(&self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> (Tensor<T>, DropoutTape<T>) {
        if mode == Mode::Eval || self.p == 0.0 {
            return (x.clone(), DropoutTape { scale: None });
        }
        let keep = T::of(1.0 / (1.0 - self.p));
        let scale: Vec<T> = (0..x.len()).map(|_| if rng.gen::<f64>() < self.p { T::zero() } else { keep }).collect();
        let y = Tensor::new(x.shape(), x.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect()).expect("same shape");
        (y, DropoutTape { scale: Some(scale) })
    }

    pub fn backward<T: Real>(&self, tape: &DropoutTape<T>, dy: &Tensor<T>) -> Tensor<T> {
        match &tape.scale {
            None => dy.clone(),
            Some(s) => Tensor::new(dy.shape(), dy.data().iter().zip(s).map(|(&g, &m)| g * m).collect()).expect("same shape"),
        }
    }
}
