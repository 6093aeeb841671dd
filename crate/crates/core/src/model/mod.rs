//! The two-branch recurrent detector.
//!
//! Per frame: an RGB branch (3×3 conv + ReLU) runs beside a frequency branch
//! (3×3 conv + ReLU, then the deep LoG bottleneck). Their channels are
//! concatenated and fused by a grouped 1×1 convolution + ReLU; with two
//! groups each fused half reads exactly one branch. Backbone blocks follow
//! (2×2 average pooling, 3×3 conv, ReLU, dropout), then global average
//! pooling gives a `P`-vector. A bidirectional LSTM over the `F` vectors
//! produces the sequence embedding.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointParam};
pub use crate::data::FaceSequence;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::loglayer::{DeepLog, DeepLogTape, LogConfig, LogSpec};
use crate::nn::{
    avg_pool2, avg_pool2_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward, BiLstm, BiLstmTape,
    Conv2d, ConvTape, Dropout, DropoutTape, Mode, Param, RnnFusion,
};
use crate::seed::derive_seed;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Frames per sequence (`F`).
    pub frames: usize,
    pub rgb_channels: usize,
    /// Output of the frequency branch's conv, fed to the LoG layer (`K`).
    pub log_stem_channels: usize,
    /// Output of the LoG layer's 1×1 reduction (`K'`).
    pub log_channels: usize,
    pub fusion_channels: usize,
    pub groups: usize,
    /// Output channels of each backbone block; the last one is the pooled
    /// feature size `P`.
    pub backbone: Vec<usize>,
    /// LSTM hidden size `D`.
    pub hidden: usize,
    pub rnn_fusion: RnnFusion,
    /// Drop the frequency branch entirely.
    pub single_branch: bool,
    pub log: LogConfig,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 32,
            width: 32,
            channels: 3,
            frames: 10,
            rgb_channels: 8,
            log_stem_channels: 8,
            log_channels: 8,
            fusion_channels: 16,
            groups: 2,
            backbone: vec![16, 32, 128],
            hidden: 32,
            rnn_fusion: RnnFusion::Cat,
            single_branch: false,
            log: LogConfig::default(),
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels > 0 && self.frames > 0 && self.hidden > 0, Config, "channels, frames and hidden size must be positive");
        ensure!(
            self.rgb_channels > 0 && self.fusion_channels > 0 && self.backbone.iter().all(|&c| c > 0),
            Config,
            "layer widths must be positive"
        );
        ensure!(!self.backbone.is_empty(), Config, "need at least one backbone block");
        ensure!(self.groups >= 1, Config, "fusion groups must be positive");
        let fusion_in = self.fusion_input_channels();
        ensure!(
            fusion_in % self.groups == 0 && self.fusion_channels % self.groups == 0,
            Config,
            "fusion {}→{} channels not divisible by {} groups",
            fusion_in,
            self.fusion_channels,
            self.groups
        );
        let scale = 1usize << self.backbone.len();
        ensure!(
            self.height % scale == 0 && self.width % scale == 0,
            Config,
            "{}×{} input cannot be halved {} times",
            self.height,
            self.width,
            self.backbone.len()
        );
        if !self.single_branch {
            ensure!(self.log_stem_channels > 0 && self.log_channels > 0, Config, "LoG branch widths must be positive");
            LogSpec::from_config(&self.log).map_err(|e| crate::Error::Config(e.to_string()))?.check_extent(self.height, self.width)?;
        }
        ensure!((0.0..1.0).contains(&self.dropout), Config, "dropout must lie in [0, 1), got {}", self.dropout);
        Ok(())
    }

    pub fn fusion_input_channels(&self) -> usize {
        self.rgb_channels + if self.single_branch { 0 } else { self.log_channels }
    }

    /// Pooled per-frame feature size `P`.
    pub fn pooled_dim(&self) -> usize {
        *self.backbone.last().expect("validated")
    }

    pub fn embedding_dim(&self) -> usize {
        match self.rnn_fusion {
            RnnFusion::Cat => 2 * self.hidden,
            RnnFusion::Sum => self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    config: ModelConfig,
    pub rgb: Conv2d<T>,
    pub log_stem: Option<Conv2d<T>>,
    pub deep_log: Option<DeepLog<T>>,
    pub fusion: Conv2d<T>,
    pub blocks: Vec<Conv2d<T>>,
    pub head: BiLstm<T>,
    dropout: Dropout,
}

#[derive(Debug, Clone)]
struct BlockTape<T: Real> {
    conv: ConvTape<T>,
    /// Post-ReLU activation, before dropout.
    act: Tensor<T>,
    drop: DropoutTape<T>,
}

#[derive(Debug, Clone)]
struct FrameTape<T: Real> {
    rgb: ConvTape<T>,
    rgb_act: Tensor<T>,
    log: Option<(ConvTape<T>, Tensor<T>, DeepLogTape<T>)>,
    fusion: ConvTape<T>,
    fused: Tensor<T>,
    blocks: Vec<BlockTape<T>>,
    /// Spatial extent of the last block's output.
    last_hw: (usize, usize),
}

/// Everything [`Model::backward`] needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ModelTape<T: Real> {
    frames: Vec<FrameTape<T>>,
    head: BiLstmTape<T>,
}

impl<T: Real> ModelTape<T> {
    /// Sign pattern of every ReLU output, used to detect kinks.
    pub fn relu_mask(&self) -> Vec<bool> {
        let mut mask = Vec::new();
        for f in &self.frames {
            let mut push = |t: &Tensor<T>| mask.extend(t.data().iter().map(|&v| v > T::zero()));
            push(&f.rgb_act);
            if let Some((_, act, _)) = &f.log {
                push(act);
            }
            push(&f.fused);
            for b in &f.blocks {
                push(&b.act);
            }
        }
        mask
    }
}

/// Learning-rate group of a parameter.
fn lr_scale_for(name: &str) -> f64 {
    match name.strip_prefix("block").and_then(|rest| rest.split('.').next()).and_then(|d| d.parse::<i32>().ok()) {
        Some(depth) => 0.5f64.powi(depth),
        None => 1.0,
    }
}

impl<T: Real> Model<T> {
    /// Deterministic initialization; each component draws from its own
    /// stream derived from `seed`, so toggling the frequency branch leaves
    /// the other components' initial weights unchanged.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let rng = |tag: &str| ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, 0));
        let rgb = Conv2d::new(c.channels, c.rgb_channels, 3, 1, &mut rng("rgb"))?;
        let (log_stem, deep_log) = if c.single_branch {
            (None, None)
        } else {
            let mut r = rng("log");
            let stem = Conv2d::new(c.channels, c.log_stem_channels, 3, 1, &mut r)?;
            let dl = DeepLog::new(LogSpec::from_config(&c.log)?, c.log_stem_channels, c.log_channels, &mut r)?;
            (Some(stem), Some(dl))
        };
        let fusion = Conv2d::new(c.fusion_input_channels(), c.fusion_channels, 1, c.groups, &mut rng("fusion"))?;
        let mut blocks = Vec::with_capacity(c.backbone.len());
        let mut width = c.fusion_channels;
        for (i, &out) in c.backbone.iter().enumerate() {
            blocks.push(Conv2d::new(width, out, 3, 1, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "block", i as u64)))?);
            width = out;
        }
        let head = BiLstm::new(c.pooled_dim(), c.hidden, c.rnn_fusion, &mut rng("head"))?;
        let mut model = Model { config: c.clone(), rgb, log_stem, deep_log, fusion, blocks, head, dropout: Dropout::new(c.dropout)? };
        model.assign_lr_scales();
        log::debug!("built model with {} parameters", model.num_params());
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// Parameters in canonical order with dotted names.
    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        fn add<'a, T: Real>(out: &mut Vec<(String, &'a Param<T>)>, prefix: &str, ps: Vec<(&'static str, &'a Param<T>)>) {
            out.extend(ps.into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)));
        }
        let mut out: Vec<(String, &Param<T>)> = Vec::new();
        add(&mut out, "rgb", self.rgb.params());
        if let (Some(stem), Some(dl)) = (&self.log_stem, &self.deep_log) {
            add(&mut out, "log.stem", stem.params());
            add(&mut out, "log.reduce", dl.params());
        }
        add(&mut out, "fusion", self.fusion.params());
        for (i, b) in self.blocks.iter().enumerate() {
            add(&mut out, &format!("block{}", i + 1), b.params());
        }
        out.extend(self.head.params().into_iter().map(|(n, p)| (format!("head.{n}"), p)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        fn add<'a, T: Real>(out: &mut Vec<(String, &'a mut Param<T>)>, prefix: &str, ps: Vec<(&'static str, &'a mut Param<T>)>) {
            out.extend(ps.into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)));
        }
        let mut out: Vec<(String, &mut Param<T>)> = Vec::new();
        add(&mut out, "rgb", self.rgb.params_mut());
        if let (Some(stem), Some(dl)) = (&mut self.log_stem, &mut self.deep_log) {
            add(&mut out, "log.stem", stem.params_mut());
            add(&mut out, "log.reduce", dl.params_mut());
        }
        add(&mut out, "fusion", self.fusion.params_mut());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            add(&mut out, &format!("block{}", i + 1), b.params_mut());
        }
        out.extend(self.head.params_mut().into_iter().map(|(n, p)| (format!("head.{n}"), p)));
        out
    }

    /// `(name, shape)` of every parameter tensor.
    pub fn census(&self) -> Vec<(String, Vec<usize>)> {
        self.params().into_iter().map(|(n, p)| (n, p.value.shape().to_vec())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Sets each parameter's rate multiplier: backbone block `L` (counted
    /// from 1 after fusion) gets `1/2^L`; the RGB branch, the frequency
    /// branch, the fusion layer and the recurrent head get 1.
    pub fn assign_lr_scales(&mut self) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        for (name, p) in self.params_mut() {
            p.lr_scale = lr_scale_for(&name);
            map.insert(name, p.lr_scale);
        }
        map
    }

    /// Embeds one sequence `[F, C, H, W]`. Dropout is drawn from `rng` in
    /// training mode only.
    pub fn forward<R: Rng>(&self, frames: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<(Tensor<T>, ModelTape<T>)> {
        let c = &self.config;
        ensure!(
            frames.rank() == 4 && frames.shape()[1..] == [c.channels, c.height, c.width],
            Shape,
            "model expects F×{}×{}×{} frames, got {:?}",
            c.channels,
            c.height,
            c.width,
            frames.shape()
        );
        ensure!(frames.shape()[0] >= 1, Shape, "sequence must hold at least one frame");
        let mut tapes = Vec::with_capacity(frames.shape()[0]);
        let mut pooled = Vec::with_capacity(frames.shape()[0]);
        for t in 0..frames.shape()[0] {
            let (p, tape) = self.forward_frame(&frames.slice_outer(t), mode, rng)?;
            pooled.push(p);
            tapes.push(tape);
        }
        let (emb, head) = self.head.forward(&pooled)?;
        Ok((emb, ModelTape { frames: tapes, head }))
    }

    fn forward_frame<R: Rng>(&self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<(Tensor<T>, FrameTape<T>)> {
        let (rgb_pre, rgb) = self.rgb.forward(x)?;
        let rgb_act = relu(&rgb_pre);
        let (fusion_in, log) = match (&self.log_stem, &self.deep_log) {
            (Some(stem), Some(dl)) => {
                let (s_pre, s_tape) = stem.forward(x)?;
                let s_act = relu(&s_pre);
                let (l, l_tape) = dl.forward(&s_act)?;
                (Tensor::concat_outer(&[&rgb_act, &l])?, Some((s_tape, s_act, l_tape)))
            }
            _ => (rgb_act.clone(), None),
        };
        let (f_pre, fusion) = self.fusion.forward(&fusion_in)?;
        let fused = relu(&f_pre);
        let mut h = fused.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for conv in &self.blocks {
            let pooled = avg_pool2(&h)?;
            let (pre, ct) = conv.forward(&pooled)?;
            let act = relu(&pre);
            let (out, drop) = self.dropout.forward(&act, mode, rng);
            blocks.push(BlockTape { conv: ct, act, drop });
            h = out;
        }
        let (_, hh, ww) = h.chw();
        Ok((global_avg_pool(&h), FrameTape { rgb, rgb_act, log, fusion, fused, blocks, last_hw: (hh, ww) }))
    }

    /// Accumulates parameter gradients for `d_embedding` = ∂loss/∂embedding.
    pub fn backward(&mut self, tape: &ModelTape<T>, d_embedding: &Tensor<T>) {
        let d_pooled = self.head.backward(&tape.head, d_embedding);
        for (ft, dp) in tape.frames.iter().zip(&d_pooled) {
            self.backward_frame(ft, dp);
        }
    }

    fn backward_frame(&mut self, ft: &FrameTape<T>, d_pooled: &Tensor<T>) {
        let (hh, ww) = ft.last_hw;
        let mut g = global_avg_pool_backward(d_pooled, hh, ww);
        for (conv, bt) in self.blocks.iter_mut().zip(&ft.blocks).rev() {
            let g_act = self.dropout.backward(&bt.drop, &g);
            let g_pre = relu_backward(&bt.act, &g_act);
            let g_pooled = conv.backward(&bt.conv, &g_pre);
            g = avg_pool2_backward(&g_pooled);
        }
        let g_fpre = relu_backward(&ft.fused, &g);
        let g_in = self.fusion.backward(&ft.fusion, &g_fpre);
        let rgb_ch = self.config.rgb_channels;
        let (g_rgb, g_log) = match &ft.log {
            Some(_) => {
                let parts = g_in.split_outer(&[rgb_ch, self.config.log_channels]).expect("fusion input layout");
                let mut it = parts.into_iter();
                (it.next().expect("rgb part"), it.next())
            }
            None => (g_in, None),
        };
        let g_rgb_pre = relu_backward(&ft.rgb_act, &g_rgb);
        self.rgb.backward(&ft.rgb, &g_rgb_pre);
        if let (Some((s_tape, s_act, l_tape)), Some(g_l), Some(stem), Some(dl)) =
            (&ft.log, g_log, self.log_stem.as_mut(), self.deep_log.as_mut())
        {
            let g_s_act = dl.backward(l_tape, &g_l);
            stem.backward(s_tape, &relu_backward(s_act, &g_s_act));
        }
    }

    /// Eval-mode embedding of a stored sequence, in `f64`.
    pub fn embed(&self, seq: &FaceSequence) -> Result<Vec<f64>> {
        let frames: Tensor<T> = seq.frames.cast();
        // Eval mode never draws from the generator.
        let (e, _) = self.forward(&frames, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(e.data().iter().map(|v| v.f64()).collect())
    }

    /// Copies every parameter into another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut out = Model::<U>::build(&self.config, 0).expect("config already validated");
        for ((_, dst), (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.cast();
            dst.grad = src.grad.cast();
            dst.lr_scale = src.lr_scale;
        }
        out
    }
}

#[cfg(test)]
mod tests;
