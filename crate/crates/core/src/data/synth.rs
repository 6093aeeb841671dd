//! Procedural face-like videos and the resampling manipulation.
//!
//! A natural video is a smooth background with a drifting elliptical "face"
//! carrying facial blobs, a rigid per-video skin texture and per-frame
//! sensor noise. A manipulation replaces an elliptical region that tracks
//! the face by `blur(upsample(downsample₂(frame)))`, alpha-blended at the
//! boundary, which removes the region's fine detail the way a
//! low-resolution face synthesizer does.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Result};
use crate::loglayer::{bandpass, LogSpec};
use crate::tensor::{depthwise_gaussian_blur, downsample2, gaussian_kernel2d, upsample_to, Tensor};

/// Kernel size of the manipulation's smoothing filter.
pub const MANIPULATION_KERNEL: usize = 5;

/// Face position per frame and its (fixed) semi-axes, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTrack {
    pub centers: Vec<(f64, f64)>,
    pub radius_y: f64,
    pub radius_x: f64,
}

impl FaceTrack {
    /// Blend weight of the manipulated region at frame `t`: 1 inside 0.85 of
    /// the face ellipse, 0 outside 1.15, linear in between.
    pub fn region_alpha(&self, t: usize, h: usize, w: usize) -> Vec<f64> {
        let (cy, cx) = self.centers[t];
        let mut alpha = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 - cy) / self.radius_y;
                let dx = (x as f64 - cx) / self.radius_x;
                let r = (dy * dy + dx * dx).sqrt();
                alpha.push(((1.15 - r) / 0.3).clamp(0.0, 1.0));
            }
        }
        alpha
    }
}

fn gauss2(dy: f64, dx: f64, sy: f64, sx: f64) -> f64 {
    (-0.5 * (dy * dy / (sy * sy) + dx * dx / (sx * sx))).exp()
}

/// Renders a natural video `[T, C, H, W]` with values in `[0, 1]`.
pub fn render_natural(frames: usize, channels: usize, h: usize, w: usize, seed: u64) -> (Tensor<f64>, FaceTrack) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let bg: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.15..0.45)).collect();
    let skin: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.45..0.75)).collect();
    // Two slow plane waves over the background.
    let waves: Vec<(f64, f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let cycles = rng.gen_range(0.3..1.2);
            (
                cycles * angle.cos() / wf,
                cycles * angle.sin() / hf,
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.02..0.08),
                rng.gen_range(0.03..0.10),
            )
        })
        .collect();

    let radius_y = hf * rng.gen_range(0.26..0.32);
    let radius_x = wf * rng.gen_range(0.20..0.25);
    let (cy0, cx0) = (hf / 2.0 + rng.gen_range(-1.5..1.5), wf / 2.0 + rng.gen_range(-1.5..1.5));
    let (amp_y, amp_x) = (hf * rng.gen_range(0.02..0.08), wf * rng.gen_range(0.02..0.08));
    let (freq_y, freq_x) = (rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5));
    let (ph_y, ph_x) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
    let span = frames.max(2) as f64;
    let centers: Vec<(f64, f64)> = (0..frames)
        .map(|t| {
            let u = std::f64::consts::TAU * t as f64 / span;
            (cy0 + amp_y * (freq_y * u + ph_y).sin(), cx0 + amp_x * (freq_x * u + ph_x).sin())
        })
        .collect();

    let texture_amp = rng.gen_range(0.04..0.10);
    let texture: Vec<f64> = (0..h * w)
        .flat_map(|_| {
            let lum = normal(&mut rng);
            let chroma: Vec<f64> = (0..channels).map(|_| 0.3 * normal(&mut rng)).collect();
            chroma.into_iter().map(move |c| lum + c)
        })
        .collect();
    let sensor = rng.gen_range(0.005..0.015);
    let feature_depth = rng.gen_range(0.15..0.3);

    let mut data = Vec::with_capacity(frames * channels * h * w);
    for (t, &(cy, cx)) in centers.iter().enumerate() {
        let (shift_y, shift_x) = ((cy - cy0).round() as isize, (cx - cx0).round() as isize);
        let mut plane = vec![0.0; channels * h * w];
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let r = ((dy / radius_y).powi(2) + (dx / radius_x).powi(2)).sqrt();
                let face = 1.0 / (1.0 + (8.0 * (r - 1.0)).exp());
                let features = gauss2(dy + 0.3 * radius_y, dx - 0.4 * radius_x, 1.2, 1.6)
                    + gauss2(dy + 0.3 * radius_y, dx + 0.4 * radius_x, 1.2, 1.6)
                    + 0.8 * gauss2(dy - 0.45 * radius_y, dx, 1.0, 0.35 * radius_x);
                let ty = (y as isize - shift_y).rem_euclid(h as isize) as usize;
                let tx = (x as isize - shift_x).rem_euclid(w as isize) as usize;
                for c in 0..channels {
                    let wave: f64 = waves
                        .iter()
                        .map(|&(fx, fy, ph, speed, a)| a * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + ph + speed * t as f64).sin())
                        .sum();
                    let base = (bg[c] + wave) * (1.0 - face) + skin[c] * face - feature_depth * features * face;
                    plane[(c * h + y) * w + x] = base + texture_amp * texture[(ty * w + tx) * channels + c] * face;
                }
            }
        }
        for v in &mut plane {
            *v = (*v + sensor * normal(&mut rng)).clamp(0.0, 1.0);
        }
        data.extend(plane);
    }
    let video = Tensor::new(&[frames, channels, h, w], data).expect("consistent extents");
    (video, FaceTrack { centers, radius_y, radius_x })
}

/// Replaces the tracked face region by its resampled, blurred version.
/// `strength = 0` returns the input bit for bit.
pub fn manipulate(video: &Tensor<f64>, track: &FaceTrack, strength: f64, sigma: f64) -> Result<Tensor<f64>> {
    ensure!((0.0..=1.0).contains(&strength), InvalidArgument, "strength must lie in [0, 1], got {}", strength);
    ensure!(video.rank() == 4, Shape, "video must be T×C×H×W, got {:?}", video.shape());
    let (t_len, c, h, w) = (video.shape()[0], video.shape()[1], video.shape()[2], video.shape()[3]);
    ensure!(track.centers.len() == t_len, Shape, "track covers {} frames, video has {}", track.centers.len(), t_len);
    let kernel = gaussian_kernel2d(MANIPULATION_KERNEL, sigma)?;
    let mut frames = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let frame = video.slice_outer(t);
        let fake = depthwise_gaussian_blur(&upsample_to(&downsample2(&frame)?, h, w)?, &kernel)?;
        let alpha = track.region_alpha(t, h, w);
        let mut out = frame.clone();
        for ch in 0..c {
            let plane = ch * h * w;
            for (i, &a) in alpha.iter().enumerate() {
                let (v, f) = (frame.data()[plane + i], fake.data()[plane + i]);
                out.data_mut()[plane + i] = (v + strength * a * (f - v)).clamp(0.0, 1.0);
            }
        }
        frames.push(out);
    }
    Tensor::stack(&frames)
}

/// Mean bandpass power over pixels fully inside the manipulated region.
pub fn region_band_power(v: &Tensor<f64>, track: &FaceTrack, spec: &LogSpec) -> Result<f64> {
    let (t_len, h, w) = (v.shape()[0], v.shape()[2], v.shape()[3]);
    let (mut sum, mut n) = (0.0, 0usize);
    for t in 0..t_len {
        let band = bandpass(&v.slice_outer(t), spec)?;
        let alpha = track.region_alpha(t, h, w);
        for (i, b) in band.data().iter().enumerate() {
            if alpha[i % (h * w)] >= 1.0 {
                sum += b * b;
                n += 1;
            }
        }
    }
    ensure!(n > 0, InvalidArgument, "region covers no pixel");
    Ok(sum / n as f64)
}
