//! Fixed (non-learnable) filters: Gaussian blur with edge-clamp padding,
//! even-index decimation, corner-aligned bilinear upsampling, and the
//! adjoint of each so gradients can flow through them.

use super::{Real, Tensor};
use crate::error::{ensure, Result};

/// Normalized, sampled 2-D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights: Tensor<f64>,
}

impl GaussianKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `size×size` weights, row-major.
    pub fn weights(&self) -> &Tensor<f64> {
        &self.weights
    }

    fn radius(&self) -> usize {
        self.size / 2
    }
}

pub fn gaussian_kernel2d(size: usize, sigma: f64) -> Result<GaussianKernel> {
    ensure!(size >= 3 && size % 2 == 1, InvalidArgument, "kernel size must be odd and >= 3, got {}", size);
    ensure!(sigma > 0.0 && sigma.is_finite(), InvalidArgument, "sigma must be positive, got {}", sigma);
    let r = (size / 2) as f64;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (0..size * size)
        .map(|idx| {
            let dy = (idx / size) as f64 - r;
            let dx = (idx % size) as f64 - r;
            (-(dy * dy + dx * dx) / denom).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let weights = Tensor::new(&[size, size], raw.into_iter().map(|v| v / total).collect())?;
    Ok(GaussianKernel { size, sigma, weights })
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Depthwise blur with edge-clamp padding. Every channel is filtered
/// independently and the spatial shape is preserved.
pub fn depthwise_gaussian_blur<T: Real>(x: &Tensor<T>, k: &GaussianKernel) -> Result<Tensor<T>> {
    ensure!(x.rank() == 3, Shape, "blur expects C×H×W, got {:?}", x.shape());
    let (_, h, w) = x.chw();
    ensure!(
        h >= k.size && w >= k.size,
        Shape,
        "{}×{} input is smaller than the {}×{} kernel",
        h,
        w,
        k.size,
        k.size
    );
    Ok(blur_unchecked(x, k))
}

/// Blur without the minimum-extent check. Edge clamping keeps the filter
/// well defined for any extent, which the coarse pyramid levels rely on.
///
/// Evaluated as `x[p] + Σ w_k (x[q_k] - x[p])` so a constant plane maps to
/// itself bit-exactly.
pub(crate) fn blur_unchecked<T: Real>(x: &Tensor<T>, k: &GaussianKernel) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let size = k.size;
    let r = k.radius() as isize;
    let taps: Vec<T> = k.weights.data().iter().map(|&v| T::of(v)).collect();
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let center = plane[y * w + xx];
                let mut acc = T::zero();
                for ky in 0..size {
                    let row = clamp_index(y as isize + ky as isize - r, h) * w;
                    for kx in 0..size {
                        let col = clamp_index(xx as isize + kx as isize - r, w);
                        acc += taps[ky * size + kx] * (plane[row + col] - center);
                    }
                }
                dst[y * w + xx] = center + acc;
            }
        }
    }
    Tensor::new(x.shape(), out).expect("shape preserved")
}

/// Adjoint of [`blur_unchecked`]: maps an output gradient to the input gradient.
pub fn blur_adjoint<T: Real>(dy: &Tensor<T>, k: &GaussianKernel) -> Tensor<T> {
    let (c, h, w) = dy.chw();
    let size = k.size;
    let r = k.radius() as isize;
    let taps: Vec<T> = k.weights.data().iter().map(|&v| T::of(v)).collect();
    let total: T = taps.iter().copied().sum();
    let self_weight = T::one() - total;
    let g = dy.data();
    let mut out = vec![T::zero(); g.len()];
    for ch in 0..c {
        let gp = &g[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let gv = gp[y * w + xx];
                dst[y * w + xx] += self_weight * gv;
                for ky in 0..size {
                    let row = clamp_index(y as isize + ky as isize - r, h) * w;
                    for kx in 0..size {
                        let col = clamp_index(xx as isize + kx as isize - r, w);
                        dst[row + col] += taps[ky * size + kx] * gv;
                    }
                }
            }
        }
    }
    Tensor::new(dy.shape(), out).expect("shape preserved")
}

/// `downsample2(blur_unchecked(x))`, evaluating the blur only at the kept
/// (even) positions. Bit-identical to the two-step form.
pub(crate) fn blur_decimate<T: Real>(x: &Tensor<T>, k: &GaussianKernel) -> Result<Tensor<T>> {
    ensure!(x.rank() == 3, Shape, "downsample expects C×H×W, got {:?}", x.shape());
    let (c, h, w) = x.chw();
    ensure!(h >= 2 && w >= 2, Shape, "cannot decimate a {}×{} map further", h, w);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let size = k.size;
    let r = k.radius() as isize;
    let taps: Vec<T> = k.weights.data().iter().map(|&v| T::of(v)).collect();
    let cols: Vec<Vec<usize>> = (0..ow).map(|x| (0..size).map(|kx| clamp_index((2 * x) as isize + kx as isize - r, w)).collect()).collect();
    let src = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for plane in src.chunks_exact(h * w) {
        for y in 0..oh {
            let rows: Vec<usize> = (0..size).map(|ky| clamp_index((2 * y) as isize + ky as isize - r, h) * w).collect();
            for (x, cx) in cols.iter().enumerate() {
                let center = plane[2 * y * w + 2 * x];
                let mut acc = T::zero();
                for (ky, &row) in rows.iter().enumerate() {
                    let line = &plane[row..row + w];
                    let t = &taps[ky * size..(ky + 1) * size];
                    for (&tv, &col) in t.iter().zip(cx) {
                        acc += tv * (line[col] - center);
                    }
                }
                out.push(center + acc);
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// Adjoint of [`blur_decimate`] for a source of extent `h×w`.
pub(crate) fn blur_decimate_adjoint<T: Real>(dy: &Tensor<T>, k: &GaussianKernel, h: usize, w: usize) -> Tensor<T> {
    let (c, oh, ow) = dy.chw();
    assert_eq!((oh, ow), (h.div_ceil(2), w.div_ceil(2)), "extent mismatch");
    let size = k.size;
    let r = k.radius() as isize;
    let taps: Vec<T> = k.weights.data().iter().map(|&v| T::of(v)).collect();
    let total: T = taps.iter().copied().sum();
    let self_weight = T::one() - total;
    let cols: Vec<Vec<usize>> = (0..ow).map(|x| (0..size).map(|kx| clamp_index((2 * x) as isize + kx as isize - r, w)).collect()).collect();
    let mut out = Tensor::zeros(&[c, h, w]);
    for (gp, dst) in dy.data().chunks_exact(oh * ow).zip(out.data_mut().chunks_exact_mut(h * w)) {
        for y in 0..oh {
            let rows: Vec<usize> = (0..size).map(|ky| clamp_index((2 * y) as isize + ky as isize - r, h) * w).collect();
            for (x, cx) in cols.iter().enumerate() {
                let gv = gp[y * ow + x];
                dst[2 * y * w + 2 * x] += self_weight * gv;
                for (ky, &row) in rows.iter().enumerate() {
                    let t = &taps[ky * size..(ky + 1) * size];
                    for (&tv, &col) in t.iter().zip(cx) {
                        dst[row + col] += tv * gv;
                    }
                }
            }
        }
    }
    out
}

/// Keeps rows and columns at even indices: `C×H×W → C×⌈H/2⌉×⌈W/2⌉`.
pub fn downsample2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(x.rank() == 3, Shape, "downsample expects C×H×W, got {:?}", x.shape());
    let (c, h, w) = x.chw();
    ensure!(h >= 2 && w >= 2, Shape, "cannot decimate a {}×{} map further", h, w);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let src = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            let row = &src[(ch * h + 2 * y) * w..(ch * h + 2 * y + 1) * w];
            out.extend(row.iter().step_by(2).copied());
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// Adjoint of [`downsample2`] for a source of extent `h×w`.
pub fn downsample2_adjoint<T: Real>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, oh, ow) = dy.chw();
    assert_eq!((oh, ow), (h.div_ceil(2), w.div_ceil(2)), "extent mismatch");
    let mut out = Tensor::zeros(&[c, h, w]);
    let g = dy.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                dst[(ch * h + 2 * y) * w + 2 * x] = g[(ch * oh + y) * ow + x];
            }
        }
    }
    out
}

/// Sample positions of corner-aligned linear interpolation from `n` to `m`
/// points: `(lower index, upper index, fraction)`.
fn linear_taps(n: usize, m: usize) -> Vec<(usize, usize, f64)> {
    (0..m)
        .map(|i| {
            if n == 1 || m == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (n - 1) as f64 / (m - 1) as f64;
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Corner-aligned bilinear interpolation to exactly `H×W`.
pub fn upsample_to<T: Real>(x: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    ensure!(x.rank() == 3, Shape, "upsample expects C×H×W, got {:?}", x.shape());
    let (c, h, w) = x.chw();
    ensure!(
        height >= h && width >= w,
        Shape,
        "target {}×{} is smaller than source {}×{}",
        height,
        width,
        h,
        w
    );
    let ys = linear_taps(h, height);
    let xs = linear_taps(w, width);
    let src = x.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, ty) in &ys {
            let ty = T::of(ty);
            for &(x0, x1, tx) in &xs {
                let tx = T::of(tx);
                let (a, b) = (plane[y0 * w + x0], plane[y0 * w + x1]);
                let (c0, d) = (plane[y1 * w + x0], plane[y1 * w + x1]);
                // Difference form: exact when the four corners agree.
                let top = a + tx * (b - a);
                let bottom = c0 + tx * (d - c0);
                out.push(top + ty * (bottom - top));
            }
        }
    }
    Tensor::new(&[c, height, width], out)
}

/// Adjoint of [`upsample_to`] for a source of extent `h×w`.
pub fn upsample_adjoint<T: Real>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, height, width) = dy.chw();
    let ys = linear_taps(h, height);
    let xs = linear_taps(w, width);
    let g = dy.data();
    let mut out = Tensor::zeros(&[c, h, w]);
    let dst = out.data_mut();
    for ch in 0..c {
        let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
        let gp = &g[ch * height * width..(ch + 1) * height * width];
        for (yi, &(y0, y1, ty)) in ys.iter().enumerate() {
            let ty = T::of(ty);
            for (xi, &(x0, x1, tx)) in xs.iter().enumerate() {
                let tx = T::of(tx);
                let gv = gp[yi * width + xi];
                let top = gv * (T::one() - ty);
                let bottom = gv * ty;
                plane[y0 * w + x0] += top * (T::one() - tx);
                plane[y0 * w + x1] += top * tx;
                plane[y1 * w + x0] += bottom * (T::one() - tx);
                plane[y1 * w + x1] += bottom * tx;
            }
        }
    }
    out
}
