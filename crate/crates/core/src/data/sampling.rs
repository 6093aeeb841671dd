use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Dataset, DatasetManifest, Split};
use crate::error::{ensure, Result};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use crate::Label;

/// `F` frames cut from one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceSequence {
    /// `[F, C, H, W]`.
    pub frames: Tensor<f32>,
    pub video_id: String,
    pub label: Label,
    /// Offset of the first frame within the source video.
    pub start_index: usize,
    /// Frame step within the source video.
    pub stride: usize,
}

impl FaceSequence {
    /// Copies frames `start, start + stride, …` (`f` of them) out of `video`.
    pub fn cut(video: &Tensor<f32>, video_id: &str, label: Label, start: usize, f: usize, stride: usize) -> Result<Self> {
        ensure!(video.rank() == 4, Shape, "video must be T×C×H×W, got {:?}", video.shape());
        ensure!(f >= 1 && stride >= 1, InvalidArgument, "sequence length and stride must be positive");
        let t_len = video.shape()[0];
        ensure!(start + (f - 1) * stride < t_len, InvalidArgument, "window at {} needs {} frames, video has {}", start, (f - 1) * stride + 1, t_len);
        let frame_len: usize = video.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(f * frame_len);
        for k in 0..f {
            let t = start + k * stride;
            data.extend_from_slice(&video.data()[t * frame_len..(t + 1) * frame_len]);
        }
        let mut shape = video.shape().to_vec();
        shape[0] = f;
        Ok(FaceSequence { frames: Tensor::new(&shape, data)?, video_id: video_id.to_string(), label, start_index: start, stride })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_lengths(manifest: &DatasetManifest, indices: &[usize], f: usize) -> Result<()> {
    ensure!(f >= 1, InvalidArgument, "sequence length must be positive");
    for &i in indices {
        let v = &manifest.videos[i];
        ensure!(v.frames >= f, Data, "video {} has {} frames, sequences need {}", v.video_id, v.frames, f);
    }
    Ok(())
}

/// One `(video index, start)` per video of `split`, start uniform over the
/// valid offsets, order shuffled. Deterministic in `(seed, epoch)`.
pub fn epoch_plan(manifest: &DatasetManifest, split: Split, f: usize, seed: u64, epoch: u64) -> Result<Vec<(usize, usize)>> {
    let indices = manifest.indices(split);
    check_lengths(manifest, &indices, f)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "epoch", epoch));
    let mut plan: Vec<(usize, usize)> = indices.iter().map(|&i| (i, rng.gen_range(0..=manifest.videos[i].frames - f))).collect();
    plan.shuffle(&mut rng);
    Ok(plan)
}

/// Like [`epoch_plan`], but each video is drawn `weight` times in
/// expectation: `⌊w⌋` windows plus one more with probability `w − ⌊w⌋`.
pub fn weighted_epoch_plan(
    manifest: &DatasetManifest,
    split: Split,
    f: usize,
    seed: u64,
    epoch: u64,
    plan: &RebalancePlan,
) -> Result<Vec<(usize, usize)>> {
    let indices = manifest.indices(split);
    check_lengths(manifest, &indices, f)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "weighted-epoch", epoch));
    let mut out = Vec::new();
    for &i in &indices {
        let w = plan.weight(manifest.videos[i].label);
        let copies = w.floor() as usize + usize::from(rng.gen::<f64>() < w.fract());
        for _ in 0..copies {
            out.push((i, rng.gen_range(0..=manifest.videos[i].frames - f)));
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Materializes [`epoch_plan`]: one contiguous length-`f` window per video.
pub fn stratified_epoch(dataset: &Dataset, split: Split, f: usize, seed: u64, epoch: u64) -> Result<Vec<FaceSequence>> {
    epoch_plan(&dataset.manifest, split, f, seed, epoch)?
        .into_iter()
        .map(|(i, start)| {
            let v = &dataset.manifest.videos[i];
            FaceSequence::cut(dataset.video(i), &v.video_id, v.label, start, f, 1)
        })
        .collect()
}

/// Inference windows: frames `k, k + stride, …, k + (f − 1)·stride` for
/// every valid `k`. Falls back to stride 1 when the video is too short.
pub fn eval_sequences(video: &Tensor<f32>, video_id: &str, label: Label, f: usize, stride: usize) -> Result<Vec<FaceSequence>> {
    ensure!(video.rank() == 4, Shape, "video must be T×C×H×W, got {:?}", video.shape());
    ensure!(f >= 1 && stride >= 1, InvalidArgument, "sequence length and stride must be positive");
    let t_len = video.shape()[0];
    let mut step = stride;
    if t_len < (f - 1) * step + 1 {
        ensure!(t_len >= f, Data, "video {} has {} frames, sequences need at least {}", video_id, t_len, f);
        log::warn!("video {video_id}: {t_len} frames too short for stride {stride}, using stride 1");
        step = 1;
    }
    let count = t_len - (f - 1) * step;
    (0..count).map(|k| FaceSequence::cut(video, video_id, label, k, f, step)).collect()
}

/// Per-class sampling weights: naturals oversampled ×2, each manipulation
/// method undersampled ×½.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RebalancePlan {
    pub natural_weight: f64,
    pub manipulated_weight: f64,
    pub natural_effective: f64,
    pub manipulated_effective: f64,
    /// Effective count per manipulation method.
    pub per_kind: BTreeMap<String, f64>,
}

impl RebalancePlan {
    pub fn weight(&self, label: Label) -> f64 {
        match label {
            Label::Natural => self.natural_weight,
            Label::Manipulated => self.manipulated_weight,
        }
    }
}

pub fn rebalance_counts(natural: usize, per_kind: &[(String, usize)]) -> Result<RebalancePlan> {
    let manipulated: usize = per_kind.iter().map(|(_, n)| n).sum();
    ensure!(natural > 0 && manipulated > 0, InvalidArgument, "rebalancing needs both classes ({} natural, {} manipulated)", natural, manipulated);
    let (nw, mw) = (2.0, 0.5);
    Ok(RebalancePlan {
        natural_weight: nw,
        manipulated_weight: mw,
        natural_effective: nw * natural as f64,
        manipulated_effective: mw * manipulated as f64,
        per_kind: per_kind.iter().map(|(k, n)| (k.clone(), mw * *n as f64)).collect(),
    })
}

/// Rebalancing plan for one split of a manifest.
pub fn rebalance(manifest: &DatasetManifest, split: Split) -> Result<RebalancePlan> {
    let mut per_kind: BTreeMap<String, usize> = BTreeMap::new();
    let mut natural = 0;
    for v in manifest.videos.iter().filter(|v| v.split == split) {
        match &v.kind {
            Some(k) => *per_kind.entry(k.clone()).or_default() += 1,
            None => natural += 1,
        }
    }
    rebalance_counts(natural, &per_kind.into_iter().collect::<Vec<_>>())
}

/// Draws `n` videos with probability proportional to their weight and
/// returns `(natural, manipulated)` draw counts.
pub fn sample_classes<R: Rng>(plan: &RebalancePlan, natural: usize, manipulated: usize, n: usize, rng: &mut R) -> (usize, usize) {
    let wn = plan.natural_weight * natural as f64;
    let wm = plan.manipulated_weight * manipulated as f64;
    let p_nat = wn / (wn + wm);
    let nat = (0..n).filter(|_| rng.gen::<f64>() < p_nat).count();
    (nat, n - nat)
}
