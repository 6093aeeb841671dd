use rand::Rng;

use super::{he_normal, Param};
use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

/// Stride-1 grouped 2-D convolution with edge-clamp ("same") padding.
///
/// Weights are `[out, in / groups, k, k]`. Output channel `o` belongs to
/// group `o / (out / groups)` and only reads that group's input slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_ch: usize,
    out_ch: usize,
    ksize: usize,
    groups: usize,
}

#[derive(Debug, Clone)]
pub struct ConvTape<T: Real> {
    input: Tensor<T>,
}

/// Patch matrix of one channel group: row `(ic·k + ky)·k + kx` holds the
/// input shifted by `(ky − r, kx − r)` with edges clamped, so that a
/// convolution becomes `out[o] = Σ_j W[o, j] · col[j]`.
fn im2col<T: Real>(src: &[T], h: usize, w: usize, k: usize) -> Vec<T> {
    let plane = h * w;
    let chans = src.len() / plane;
    let r = k / 2;
    let mut col = Vec::with_capacity(chans * k * k * plane);
    for inp in src.chunks_exact(plane) {
        for ky in 0..k {
            for kx in 0..k {
                for y in 0..h {
                    let sy = (y + ky).saturating_sub(r).min(h - 1);
                    let srow = &inp[sy * w..(sy + 1) * w];
                    col.extend((0..w).map(|x| srow[(x + kx).saturating_sub(r).min(w - 1)]));
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im<T: Real>(col: &[T], dst: &mut [T], h: usize, w: usize, k: usize) {
    let plane = h * w;
    let r = k / 2;
    for (ch, dinp) in dst.chunks_exact_mut(plane).enumerate() {
        for ky in 0..k {
            for kx in 0..k {
                let rows = &col[((ch * k + ky) * k + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = (y + ky).saturating_sub(r).min(h - 1);
                    let drow = &mut dinp[sy * w..(sy + 1) * w];
                    for (x, &g) in rows[y * w..(y + 1) * w].iter().enumerate() {
                        drow[(x + kx).saturating_sub(r).min(w - 1)] += g;
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], a: T, x: &[T]) {
    for (d, &v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Dot product with eight independent partial sums, which lets the
/// compiler vectorize it.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, ksize: usize, groups: usize, rng: &mut R) -> Result<Self> {
        ensure!(groups >= 1, InvalidArgument, "groups must be positive");
        ensure!(
            in_ch % groups == 0 && out_ch % groups == 0 && in_ch > 0 && out_ch > 0,
            InvalidArgument,
            "channels {}→{} not divisible by {} groups",
            in_ch,
            out_ch,
            groups
        );
        ensure!(ksize % 2 == 1, InvalidArgument, "kernel size must be odd, got {}", ksize);
        let fan_in = in_ch / groups * ksize * ksize;
        let weight = he_normal(&[out_ch, in_ch / groups, ksize, ksize], fan_in, rng);
        Ok(Conv2d {
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            in_ch,
            out_ch,
            ksize,
            groups,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn ksize(&self) -> usize {
        self.ksize
    }

    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvTape<T>)> {
        ensure!(x.rank() == 3, Shape, "conv expects C×H×W, got {:?}", x.shape());
        let (c, h, w) = x.chw();
        ensure!(c == self.in_ch, Shape, "conv expects {} channels, got {}", self.in_ch, c);
        let k = self.ksize;
        let (in_g, out_g) = (self.in_ch / self.groups, self.out_ch / self.groups);
        let plane = h * w;
        let taps = in_g * k * k;
        let wt = self.weight.value.data();
        let mut out = vec![T::zero(); self.out_ch * plane];
        for g in 0..self.groups {
            let src = &x.data()[g * in_g * plane..(g + 1) * in_g * plane];
            let owned;
            let col = if k == 1 {
                src
            } else {
                owned = im2col(src, h, w, k);
                &owned[..]
            };
            for o in g * out_g..(g + 1) * out_g {
                let dst = &mut out[o * plane..(o + 1) * plane];
                dst.fill(self.bias.value.data()[o]);
                for (j, &wv) in wt[o * taps..(o + 1) * taps].iter().enumerate() {
                    axpy(dst, wv, &col[j * plane..(j + 1) * plane]);
                }
            }
        }
        let y = Tensor::new(&[self.out_ch, h, w], out)?;
        Ok((y, ConvTape { input: x.clone() }))
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, tape: &ConvTape<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (c, h, w) = tape.input.chw();
        assert_eq!(dy.shape(), &[self.out_ch, h, w], "conv backward shape mismatch");
        let k = self.ksize;
        let (in_g, out_g) = (self.in_ch / self.groups, self.out_ch / self.groups);
        let plane = h * w;
        let taps = in_g * k * k;
        let g_out = dy.data();
        let mut dx = vec![T::zero(); c * plane];
        for g in 0..self.groups {
            let src = &tape.input.data()[g * in_g * plane..(g + 1) * in_g * plane];
            let owned;
            let col = if k == 1 {
                src
            } else {
                owned = im2col(src, h, w, k);
                &owned[..]
            };
            let mut dcol = vec![T::zero(); taps * plane];
            for o in g * out_g..(g + 1) * out_g {
                let gplane = &g_out[o * plane..(o + 1) * plane];
                self.bias.grad.data_mut()[o] += gplane.iter().copied().sum::<T>();
                let wrow = &self.weight.value.data()[o * taps..(o + 1) * taps];
                let dwrow = &mut self.weight.grad.data_mut()[o * taps..(o + 1) * taps];
                for (j, (dw, &wv)) in dwrow.iter_mut().zip(wrow).enumerate() {
                    *dw += dot(gplane, &col[j * plane..(j + 1) * plane]);
                    axpy(&mut dcol[j * plane..(j + 1) * plane], wv, gplane);
                }
            }
            let dsrc = &mut dx[g * in_g * plane..(g + 1) * in_g * plane];
            if k == 1 {
                dsrc.copy_from_slice(&dcol);
            } else {
                col2im(&dcol, dsrc, h, w, k);
            }
        }
        Tensor::new(&[c, h, w], dx).expect("shape preserved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct evaluation of the grouped convolution, used as an oracle.
    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (_, h, w) = x.chw();
        let (k, r) = (conv.ksize, conv.ksize as i64 / 2);
        let in_g = conv.in_ch / conv.groups;
        let out_g = conv.out_ch / conv.groups;
        Tensor::from_fn(&[conv.out_ch, h, w], |idx| {
            let o = idx / (h * w);
            let (y, xx) = ((idx % (h * w)) / w, idx % w);
            let g = o / out_g;
            let mut acc = conv.bias.value.data()[o];
            for ic in 0..in_g {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = (y as i64 + ky as i64 - r).clamp(0, h as i64 - 1) as usize;
                        let sx = (xx as i64 + kx as i64 - r).clamp(0, w as i64 - 1) as usize;
                        acc += conv.weight.value.data()[((o * in_g + ic) * k + ky) * k + kx]
                            * x.data()[((g * in_g + ic) * h + sy) * w + sx];
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(ci, co, k, g, h, w) in &[(3, 4, 3, 1, 5, 6), (4, 6, 3, 2, 4, 4), (4, 4, 1, 4, 3, 7), (2, 2, 5, 1, 3, 3)] {
            let mut conv = Conv2d::<f64>::new(ci, co, k, g, &mut rng).unwrap();
            conv.bias.value = random(&[co], &mut rng);
            let x = random(&[ci, h, w], &mut rng);
            let (y, _) = conv.forward(&x).unwrap();
            assert!(y.sub(&naive_conv(&conv, &x)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn depthwise_unit_weights_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f64>::new(3, 3, 1, 3, &mut rng).unwrap();
        conv.weight.value.fill(1.0);
        let x = random(&[3, 4, 5], &mut rng);
        assert_eq!(conv.forward(&x).unwrap().0, x);
    }

    #[test]
    fn groups_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f64>::new(4, 6, 1, 2, &mut rng).unwrap();
        let x = random(&[4, 3, 3], &mut rng);
        let (y0, _) = conv.forward(&x).unwrap();
        let mut altered = conv.clone();
        // first group owns output channels 0..3 and weight rows 0..3
        altered.weight.value.data_mut()[1] += 10.0;
        let (y1, _) = altered.forward(&x).unwrap();
        assert_eq!(&y0.data()[27..], &y1.data()[27..]);
        assert_ne!(&y0.data()[..27], &y1.data()[..27]);
    }

    #[test]
    fn grouped_equals_independent_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f64>::new(4, 6, 3, 2, &mut rng).unwrap();
        let x = random(&[4, 5, 5], &mut rng);
        let (y, _) = conv.forward(&x).unwrap();
        let xs = x.split_outer(&[2, 2]).unwrap();
        let ws = conv.weight.value.split_outer(&[3, 3]).unwrap();
        let bs = conv.bias.value.data();
        for g in 0..2 {
            let mut part = Conv2d::<f64>::new(2, 3, 3, 1, &mut rng).unwrap();
            part.weight.value = ws[g].clone();
            part.bias.value = Tensor::vector(bs[g * 3..g * 3 + 3].to_vec());
            let (yg, _) = part.forward(&xs[g]).unwrap();
            assert_eq!(yg.data(), &y.data()[g * 75..(g + 1) * 75]);
        }
    }

    #[test]
    fn rejects_indivisible_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Conv2d::<f64>::new(3, 4, 1, 2, &mut rng).is_err());
        assert!(Conv2d::<f64>::new(4, 3, 1, 2, &mut rng).is_err());
        let conv = Conv2d::<f64>::new(2, 2, 3, 1, &mut rng).unwrap();
        assert!(conv.forward(&Tensor::zeros(&[3, 4, 4])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(ci, co, k, g, h, w) in &[(2, 3, 3, 1, 4, 5), (4, 4, 1, 2, 3, 3), (2, 4, 3, 2, 1, 4)] {
            let mut conv = Conv2d::<f64>::new(ci, co, k, g, &mut rng).unwrap();
            conv.bias.value = random(&[co], &mut rng);
            let x = random(&[ci, h, w], &mut rng);
            let probe = random(&[co, h, w], &mut rng);
            let (_, tape) = conv.forward(&x).unwrap();
            let dx = conv.backward(&tape, &probe);
            let fd_x = finite_diff_grad(|t| conv.forward(t).unwrap().0.dot(&probe), &x, 1e-5);
            assert!(dx.sub(&fd_x).max_abs() < 1e-8);
            let base = conv.clone();
            let fd_w = finite_diff_grad(
                |wv| {
                    let mut c = base.clone();
                    c.weight.value = wv.clone();
                    c.forward(&x).unwrap().0.dot(&probe)
                },
                &base.weight.value,
                1e-5,
            );
            assert!(conv.weight.grad.sub(&fd_w).max_abs() < 1e-8);
        }
    }
}
