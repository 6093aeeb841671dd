//! Four-gate LSTM with backpropagation through time, and the bidirectional
//! head that runs two independent cells over a sequence and its reversal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Linear, LinearTape, Param};
use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RnnFusion {
    Cat,
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T: Real> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![T::zero(); hidden], c: vec![T::zero(); hidden] }
    }
}

/// Gate layout in the stacked `4·D` pre-activation: input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T: Real> {
    pub input: Linear<T>,
    pub recurrent: Linear<T>,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmStepTape<T: Real> {
    input: LinearTape<T>,
    recurrent: LinearTape<T>,
    c_prev: Vec<T>,
    i: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
    o: Vec<T>,
    tanh_c: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LstmSequenceTape<T: Real> {
    steps: Vec<LstmStepTape<T>>,
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Real> LstmCell<T> {
    /// Weights and biases uniform in `±1/sqrt(hidden)`; forget-gate bias 1.
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        ensure!(input_dim > 0 && hidden > 0, InvalidArgument, "LSTM dimensions must be positive");
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut input = Linear::uniform(input_dim, 4 * hidden, true, bound, rng);
        let recurrent = Linear::uniform(hidden, 4 * hidden, false, bound, rng);
        if let Some(b) = input.bias.as_mut() {
            b.value.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = T::one());
        }
        Ok(LstmCell { input, recurrent, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input.input_dim()
    }

    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out: Vec<(String, &Param<T>)> = self.input.params().into_iter().map(|(n, p)| (format!("input.{n}"), p)).collect();
        out.extend(self.recurrent.params().into_iter().map(|(n, p)| (format!("recurrent.{n}"), p)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out: Vec<(String, &mut Param<T>)> =
            self.input.params_mut().into_iter().map(|(n, p)| (format!("input.{n}"), p)).collect();
        out.extend(self.recurrent.params_mut().into_iter().map(|(n, p)| (format!("recurrent.{n}"), p)));
        out
    }

    pub fn step(&self, x: &Tensor<T>, state: &LstmState<T>) -> Result<(LstmState<T>, LstmStepTape<T>)> {
        let d = self.hidden;
        let (zx, tx) = self.input.forward(x)?;
        let (zh, th) = self.recurrent.forward(&Tensor::vector(state.h.clone()))?;
        let z: Vec<T> = zx.data().iter().zip(zh.data()).map(|(&a, &b)| a + b).collect();
        let i: Vec<T> = z[..d].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<T> = z[d..2 * d].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<T> = z[2 * d..3 * d].iter().map(|&v| v.tanh()).collect();
        let o: Vec<T> = z[3 * d..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<T> = (0..d).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<T> = (0..d).map(|k| o[k] * tanh_c[k]).collect();
        let tape = LstmStepTape { input: tx, recurrent: th, c_prev: state.c.clone(), i, f, g, o, tanh_c };
        Ok((LstmState { h, c }, tape))
    }

    /// Backward through one step. Takes gradients w.r.t. the step's output
    /// `(h, c)` and returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(&mut self, tape: &LstmStepTape<T>, dh: &[T], dc: &[T]) -> (Tensor<T>, Vec<T>, Vec<T>) {
        let d = self.hidden;
        let mut dz = vec![T::zero(); 4 * d];
        let mut dc_prev = vec![T::zero(); d];
        for k in 0..d {
            let (i, f, g, o, tc) = (tape.i[k], tape.f[k], tape.g[k], tape.o[k], tape.tanh_c[k]);
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * o * (T::one() - tc * tc);
            dz[k] = dct * g * i * (T::one() - i);
            dz[d + k] = dct * tape.c_prev[k] * f * (T::one() - f);
            dz[2 * d + k] = dct * i * (T::one() - g * g);
            dz[3 * d + k] = d_o * o * (T::one() - o);
            dc_prev[k] = dct * f;
        }
        let dz = Tensor::vector(dz);
        let dx = self.input.backward(&tape.input, &dz);
        let dh_prev = self.recurrent.backward(&tape.recurrent, &dz).into_data();
        (dx, dh_prev, dc_prev)
    }

    /// Runs from the zero state and returns the final hidden vector.
    pub fn sequence(&self, xs: &[Tensor<T>]) -> Result<(Tensor<T>, LstmSequenceTape<T>)> {
        ensure!(!xs.is_empty(), InvalidArgument, "LSTM sequence must be non-empty");
        let mut state = LstmState::zeros(self.hidden);
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, tape) = self.step(x, &state)?;
            steps.push(tape);
            state = next;
        }
        Ok((Tensor::vector(state.h), LstmSequenceTape { steps }))
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// state. Returns one input gradient per timestep, in input order.
    pub fn sequence_backward(&mut self, tape: &LstmSequenceTape<T>, dh_final: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut dh = dh_final.data().to_vec();
        let mut dc = vec![T::zero(); self.hidden];
        let mut dxs = Vec::with_capacity(tape.steps.len());
        for step in tape.steps.iter().rev() {
            let (dx, dh_prev, dc_prev) = self.step_backward(step, &dh, &dc);
            dxs.push(dx);
            dh = dh_prev;
            dc = dc_prev;
        }
        dxs.reverse();
        dxs
    }
}

/// Two independent cells over the sequence and its reversal; final hidden
/// states fused by concatenation (`2·D`) or sum (`D`).
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm<T: Real> {
    pub forward_cell: LstmCell<T>,
    pub backward_cell: LstmCell<T>,
    fusion: RnnFusion,
}

#[derive(Debug, Clone)]
pub struct BiLstmTape<T: Real> {
    forward: LstmSequenceTape<T>,
    backward: LstmSequenceTape<T>,
}

impl<T: Real> BiLstm<T> {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, fusion: RnnFusion, rng: &mut R) -> Result<Self> {
        let forward_cell = LstmCell::new(input_dim, hidden, rng)?;
        let backward_cell = LstmCell::new(input_dim, hidden, rng)?;
        Ok(BiLstm { forward_cell, backward_cell, fusion })
    }

    pub fn fusion(&self) -> RnnFusion {
        self.fusion
    }

    pub fn output_dim(&self) -> usize {
        match self.fusion {
            RnnFusion::Cat => 2 * self.forward_cell.hidden(),
            RnnFusion::Sum => self.forward_cell.hidden(),
        }
    }

    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out: Vec<(String, &Param<T>)> =
            self.forward_cell.params().into_iter().map(|(n, p)| (format!("fwd.{n}"), p)).collect();
        out.extend(self.backward_cell.params().into_iter().map(|(n, p)| (format!("bwd.{n}"), p)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out: Vec<(String, &mut Param<T>)> =
            self.forward_cell.params_mut().into_iter().map(|(n, p)| (format!("fwd.{n}"), p)).collect();
        out.extend(self.backward_cell.params_mut().into_iter().map(|(n, p)| (format!("bwd.{n}"), p)));
        out
    }

    pub fn forward(&self, xs: &[Tensor<T>]) -> Result<(Tensor<T>, BiLstmTape<T>)> {
        ensure!(!xs.is_empty(), InvalidArgument, "bidirectional sequence must be non-empty");
        let (hf, tf) = self.forward_cell.sequence(xs)?;
        let reversed: Vec<Tensor<T>> = xs.iter().rev().cloned().collect();
        let (hb, tb) = self.backward_cell.sequence(&reversed)?;
        let out = match self.fusion {
            RnnFusion::Cat => Tensor::concat_outer(&[&hf, &hb])?,
            RnnFusion::Sum => hf.add(&hb),
        };
        Ok((out, BiLstmTape { forward: tf, backward: tb }))
    }

    pub fn backward(&mut self, tape: &BiLstmTape<T>, dy: &Tensor<T>) -> Vec<Tensor<T>> {
        let d = self.forward_cell.hidden();
        let (df, db) = match self.fusion {
            RnnFusion::Cat => {
                let parts = dy.split_outer(&[d, d]).expect("cat gradient has 2·D entries");
                (parts[0].clone(), parts[1].clone())
            }
            RnnFusion::Sum => (dy.clone(), dy.clone()),
        };
        let mut dxs = self.forward_cell.sequence_backward(&tape.forward, &df);
        let dxs_rev = self.backward_cell.sequence_backward(&tape.backward, &db);
        for (acc, g) in dxs.iter_mut().zip(dxs_rev.iter().rev()) {
            acc.add_assign(g);
        }
        dxs
    }
}
