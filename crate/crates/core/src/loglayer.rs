//! Deep Laplacian-of-Gaussian bottleneck.
//!
//! For each scale `s = 1..S` the input is pushed through `s` rounds of
//! blur → decimate, interpolated back to full resolution, and subtracted
//! from the input. The `S` residual bands are stacked along the channel axis
//! (`K → S·K`) and a learnable 1×1 convolution maps them to `K'` planes.
//! The Gaussian is fixed: it holds no parameters and receives no gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::{Conv2d, ConvTape, Param};
use crate::tensor::{
    blur_decimate, blur_decimate_adjoint, gaussian_kernel2d, upsample_adjoint, upsample_to, GaussianKernel, Real, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogConfig {
    pub scales: usize,
    pub kernel_size: usize,
    pub sigma: f64,
}

impl Default for LogConfig {
    fn default() -> Self {
        LogConfig { scales: 3, kernel_size: 5, sigma: 1.0 }
    }
}

/// Fixed part of the layer: number of scales and the Gaussian prefilter.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSpec {
    scales: usize,
    kernel: GaussianKernel,
}

impl LogSpec {
    pub fn new(scales: usize, kernel: GaussianKernel) -> Result<Self> {
        ensure!(scales >= 1, InvalidArgument, "LoG needs at least one scale");
        Ok(LogSpec { scales, kernel })
    }

    pub fn from_config(cfg: &LogConfig) -> Result<Self> {
        LogSpec::new(cfg.scales, gaussian_kernel2d(cfg.kernel_size, cfg.sigma)?)
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn kernel(&self) -> &GaussianKernel {
        &self.kernel
    }

    /// Checks that an `h×w` map survives `S` rounds of decimation.
    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        let (mut a, mut b) = (h, w);
        for level in 0..self.scales {
            ensure!(
                a >= 2 && b >= 2,
                Shape,
                "{}×{} input too small for {} LoG scales (level {} is {}×{})",
                h,
                w,
                self.scales,
                level,
                a,
                b
            );
            a = a.div_ceil(2);
            b = b.div_ceil(2);
        }
        Ok(())
    }
}

/// `C×H×W → (S·C)×H×W`, bands ordered by scale: `[band_1, …, band_S]`.
pub fn bandpass<T: Real>(x: &Tensor<T>, spec: &LogSpec) -> Result<Tensor<T>> {
    ensure!(x.rank() == 3, Shape, "bandpass expects C×H×W, got {:?}", x.shape());
    let (_, h, w) = x.chw();
    spec.check_extent(h, w)?;
    let mut level = x.clone();
    let mut bands = Vec::with_capacity(spec.scales);
    for _ in 0..spec.scales {
        level = blur_decimate(&level, &spec.kernel)?;
        let low = upsample_to(&level, h, w)?;
        bands.push(x.sub(&low));
    }
    Tensor::concat_outer(&bands.iter().collect::<Vec<_>>())
}

/// Adjoint of [`bandpass`]: `(S·C)×H×W → C×H×W`.
pub fn bandpass_adjoint<T: Real>(dy: &Tensor<T>, spec: &LogSpec) -> Tensor<T> {
    let (sc, h, w) = dy.chw();
    let c = sc / spec.scales;
    let bands = dy.split_outer(&vec![c; spec.scales]).expect("S·C channels");
    let mut extents = vec![(h, w)];
    for s in 0..spec.scales {
        let (a, b) = extents[s];
        extents.push((a.div_ceil(2), b.div_ceil(2)));
    }
    // Each band is x - U(level_s); walk the pyramid from the coarsest level.
    let mut carry: Option<Tensor<T>> = None;
    for s in (1..=spec.scales).rev() {
        let (lh, lw) = extents[s];
        let mut g = upsample_adjoint(&bands[s - 1].scale(-T::one()), lh, lw);
        if let Some(deeper) = carry.take() {
            g.add_assign(&deeper);
        }
        let (ph, pw) = extents[s - 1];
        carry = Some(blur_decimate_adjoint(&g, &spec.kernel, ph, pw));
    }
    let mut dx = carry.expect("at least one scale");
    for band in &bands {
        dx.add_assign(band);
    }
    dx
}

/// Bandpass followed by a learnable 1×1 reduction with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepLog<T: Real> {
    spec: LogSpec,
    pub reduction: Conv2d<T>,
    in_ch: usize,
}

#[derive(Debug, Clone)]
pub struct DeepLogTape<T: Real> {
    reduction: ConvTape<T>,
}

impl<T: Real> DeepLog<T> {
    pub fn new<R: Rng>(spec: LogSpec, in_ch: usize, out_ch: usize, rng: &mut R) -> Result<Self> {
        let reduction = Conv2d::new(spec.scales * in_ch, out_ch, 1, 1, rng)?;
        Ok(DeepLog { spec, reduction, in_ch })
    }

    pub fn spec(&self) -> &LogSpec {
        &self.spec
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.reduction.out_channels()
    }

    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        self.reduction.params()
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        self.reduction.params_mut()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DeepLogTape<T>)> {
        ensure!(
            x.rank() == 3 && x.shape()[0] == self.in_ch,
            Shape,
            "deep LoG expects {} input planes, got {:?}",
            self.in_ch,
            x.shape()
        );
        let bands = bandpass(x, &self.spec)?;
        let (y, tape) = self.reduction.forward(&bands)?;
        Ok((y, DeepLogTape { reduction: tape }))
    }

    pub fn backward(&mut self, tape: &DeepLogTape<T>, dy: &Tensor<T>) -> Tensor<T> {
        let dbands = self.reduction.backward(&tape.reduction, dy);
        bandpass_adjoint(&dbands, &self.spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{blur_unchecked, downsample2, finite_diff_grad};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(scales: usize) -> LogSpec {
        LogSpec::from_config(&LogConfig { scales, ..Default::default() }).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_input_is_suppressed_exactly() {
        for s in 1..=3 {
            for &v in &[0.0, 1.0, -0.3, 123.456] {
                let x = Tensor::<f64>::from_fn(&[3, 16, 12], |i| v + (i / 192) as f64);
                let y = bandpass(&x, &spec(s)).unwrap();
                assert_eq!(y.shape(), &[3 * s, 16, 12]);
                assert!(y.data().iter().all(|&b| b == 0.0), "S={s} v={v}");
            }
        }
    }

    #[test]
    fn rejects_too_small_input() {
        assert!(bandpass(&Tensor::<f64>::zeros(&[1, 4, 4]), &spec(3)).is_err());
        assert!(bandpass(&Tensor::<f64>::zeros(&[1, 5, 5]), &spec(3)).is_ok());
        assert!(bandpass(&Tensor::<f64>::zeros(&[1, 1, 8]), &spec(1)).is_err());
    }

    #[test]
    fn impulse_band_is_localized() {
        let mut x = Tensor::<f64>::zeros(&[1, 16, 16]);
        x.data_mut()[8 * 16 + 8] = 1.0;
        let y = bandpass(&x, &spec(1)).unwrap();
        let k = spec(1);
        let low = upsample_to(&downsample2(&blur_unchecked(&x, k.kernel())).unwrap(), 16, 16).unwrap();
        assert!(y.sub(&x.sub(&low)).max_abs() == 0.0);
        let total: f64 = y.data().iter().map(|v| v * v).sum();
        let near: f64 = (0..256usize)
            .filter(|i| (i / 16).abs_diff(8) <= 4 && (i % 16).abs_diff(8) <= 4)
            .map(|i| y.data()[i] * y.data()[i])
            .sum();
        assert!(near / total > 0.999, "energy near impulse {}", near / total);
        assert!(y.data()[8 * 16 + 8] > 0.8);
        // Decimation of a blurred impulse followed by corner-aligned
        // interpolation does not preserve mass, so the band does not sum to zero.
        assert!((y.sum() - BAND1_IMPULSE_SUM).abs() < 1e-12, "{}", y.sum());
    }

    // Independent NumPy evaluation of band_1 at 16×16 with the impulse at (8, 8).
    const BAND1_IMPULSE_SUM: f64 = -0.19117056560600004;

    #[test]
    fn single_scale_identity_reduction_is_classic_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = DeepLog::<f64>::new(spec(1), 2, 2, &mut rng).unwrap();
        layer.reduction.weight.value = Tensor::new(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = random(&[2, 9, 9], &mut rng);
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y, bandpass(&x, &spec(1)).unwrap());
    }

    #[test]
    fn constant_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = DeepLog::<f64>::new(spec(3), 4, 8, &mut rng).unwrap();
        let (y, _) = layer.forward(&Tensor::full(&[4, 16, 16], 0.77)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(layer.forward(&Tensor::zeros(&[3, 16, 16])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = DeepLog::<f64>::new(spec(3), 4, 8, &mut rng).unwrap();
        layer.reduction.bias.value = random(&[8], &mut rng);
        let x = random(&[4, 16, 16], &mut rng);
        let probe = random(&[8, 16, 16], &mut rng);
        let (_, tape) = layer.forward(&x).unwrap();
        let dx = layer.backward(&tape, &probe);
        let fd = finite_diff_grad(|t| layer.forward(t).unwrap().0.dot(&probe), &x, 1e-5);
        assert!(dx.sub(&fd).max_abs() / fd.max_abs() < 1e-8);
        let base = layer.clone();
        let fd_w = finite_diff_grad(
            |wv| {
                let mut l = base.clone();
                l.reduction.weight.value = wv.clone();
                l.forward(&x).unwrap().0.dot(&probe)
            },
            &base.reduction.weight.value,
            1e-5,
        );
        assert!(layer.reduction.weight.grad.sub(&fd_w).max_abs() / fd_w.max_abs() < 1e-8);
    }

    /// Mean squared band_1 response over the interior of a horizontal sinusoid.
    fn band1_energy(freq: f64) -> f64 {
        let n = 64;
        let x = Tensor::<f64>::from_fn(&[1, n, n], |i| (2.0 * std::f64::consts::PI * freq * (i % n) as f64).sin());
        let y = bandpass(&x, &spec(1)).unwrap();
        let m = 8;
        let mut acc = 0.0;
        for r in m..n - m {
            for c in m..n - m {
                acc += y.data()[r * n + c].powi(2);
            }
        }
        acc / ((n - 2 * m) * (n - 2 * m)) as f64
    }

    #[test]
    fn band_energy_grows_with_frequency() {
        let freqs = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0];
        let e: Vec<f64> = freqs.iter().map(|&f| band1_energy(f)).collect();
        for pair in e.windows(2) {
            assert!(pair[1] >= pair[0], "{e:?}");
        }
    }

    proptest! {
        #[test]
        fn bandpass_is_linear(seed in 0u64..500, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[2, 12, 10], &mut rng);
            let y = random(&[2, 12, 10], &mut rng);
            let sp = spec(3);
            let lhs = bandpass(&x.scale(a).add(&y.scale(b)), &sp).unwrap();
            let rhs = bandpass(&x, &sp).unwrap().scale(a).add(&bandpass(&y, &sp).unwrap().scale(b));
            prop_assert!(lhs.sub(&rhs).max_abs() < 1e-12);
        }

        #[test]
        fn bandpass_rejects_dc_offset(seed in 0u64..500, c in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[2, 16, 16], &mut rng);
            let sp = spec(3);
            let shifted = bandpass(&x.map(|v| v + c), &sp).unwrap();
            prop_assert!(shifted.sub(&bandpass(&x, &sp).unwrap()).max_abs() < 1e-12);
        }
    }
}
