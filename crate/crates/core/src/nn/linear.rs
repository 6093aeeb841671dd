use rand::Rng;

use super::{uniform, Param};
use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

/// Affine map `y = W x + b` on vectors; `W` is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Real> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

#[derive(Debug, Clone)]
pub struct LinearTape<T: Real> {
    input: Tensor<T>,
}

impl<T: Real> Linear<T> {
    /// Uniform initialization in `[-bound, bound]` for weights and bias.
    pub fn uniform<R: Rng>(input: usize, output: usize, bias: bool, bound: f64, rng: &mut R) -> Self {
        let weight = Param::new(uniform(&[output, input], bound, rng));
        let bias = bias.then(|| Param::new(uniform(&[output], bound, rng)));
        Linear { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        let mut out = vec![("weight", &mut self.weight)];
        if let Some(b) = self.bias.as_mut() {
            out.push(("bias", b));
        }
        out
    }

    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        let mut out = vec![("weight", &self.weight)];
        if let Some(b) = self.bias.as_ref() {
            out.push(("bias", b));
        }
        out
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LinearTape<T>)> {
        let (n_out, n_in) = (self.output_dim(), self.input_dim());
        ensure!(x.shape() == [n_in], Shape, "linear expects [{}], got {:?}", n_in, x.shape());
        let w = self.weight.value.data();
        let xs = x.data();
        let y: Vec<T> = (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                let b = self.bias.as_ref().map_or(T::zero(), |b| b.value.data()[o]);
                row.iter().zip(xs).fold(b, |acc, (&a, &v)| acc + a * v)
            })
            .collect();
        Ok((Tensor::vector(y), LinearTape { input: x.clone() }))
    }

    pub fn backward(&mut self, tape: &LinearTape<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (n_out, n_in) = (self.output_dim(), self.input_dim());
        assert_eq!(dy.shape(), &[n_out], "linear backward shape mismatch");
        let xs = tape.input.data();
        let g = dy.data();
        let w = self.weight.value.data();
        let mut dx = vec![T::zero(); n_in];
        let dw = self.weight.grad.data_mut();
        for o in 0..n_out {
            let go = g[o];
            let row = &w[o * n_in..(o + 1) * n_in];
            for ((d, acc), (&wv, &xv)) in dx.iter_mut().zip(&mut dw[o * n_in..(o + 1) * n_in]).zip(row.iter().zip(xs)) {
                *d += wv * go;
                *acc += go * xv;
            }
        }
        if let Some(b) = self.bias.as_mut() {
            b.grad.add_assign(dy);
        }
        Tensor::vector(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lin = Linear::<f64>::uniform(5, 3, true, 0.5, &mut rng);
        let x = Tensor::from_fn(&[5], |_| rng.gen_range(-1.0..1.0));
        let probe = Tensor::from_fn(&[3], |_| rng.gen_range(-1.0..1.0));
        let (_, tape) = lin.forward(&x).unwrap();
        let dx = lin.backward(&tape, &probe);
        let fd = finite_diff_grad(|t| lin.forward(t).unwrap().0.dot(&probe), &x, 1e-5);
        assert!(dx.sub(&fd).max_abs() < 1e-9);
        let base = lin.clone();
        let fd_w = finite_diff_grad(
            |w| {
                let mut l = base.clone();
                l.weight.value = w.clone();
                l.forward(&x).unwrap().0.dot(&probe)
            },
            &base.weight.value,
            1e-5,
        );
        assert!(lin.weight.grad.sub(&fd_w).max_abs() < 1e-9);
        assert_eq!(lin.bias.as_ref().unwrap().grad, probe);
    }
}
