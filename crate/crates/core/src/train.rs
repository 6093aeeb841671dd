//! Training, scoring and the run configuration that drives both.
//!
//! A run precomputes the hypersphere center from eval-mode embeddings of the
//! natural training videos, then trains with Adam on stratified epochs,
//! monitoring the validation loss for the plateau schedule and keeping the
//! best validation checkpoint.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{eval_sequences, epoch_plan, rebalance, weighted_epoch_plan, DataConfig, Dataset, FaceSequence, Split};
use crate::error::{ensure, Error, Result};
use crate::loss::{
    anomaly_score, compute_center, isolation_loss, isolation_loss_grad, scaled_radii, BatchPartition, HypersphereSpec,
};
use crate::metrics::{auc, roc, ScoreRecord};
use crate::model::{Checkpoint, Model, ModelConfig};
use crate::nn::{Adam, AdamConfig, Mode, PlateauScheduler};
use crate::seed::derive_seed;
use crate::tensor::{Real, Tensor};
use crate::Label;

/// Radii given at a reference embedding dimension; with `scale_to_dim` they
/// are rescaled by `sqrt(dim / reference_dim)` for the model's dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub r_minus: f64,
    pub r_plus: f64,
    pub reference_dim: usize,
    pub scale_to_dim: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { r_minus: 0.042, r_plus: 1.638, reference_dim: 256, scale_to_dim: true }
    }
}

impl LossConfig {
    pub fn radii(&self, dim: usize) -> (f64, f64) {
        if self.scale_to_dim {
            scaled_radii(self.r_minus, self.r_plus, self.reference_dim, dim)
        } else {
            (self.r_minus, self.r_plus)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Global rate `μ`.
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimizerConfig { lr: 1e-3, betas: [a.beta1, a.beta2], eps: a.eps, weight_decay: a.weight_decay }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.betas[0], beta2: self.betas[1], eps: self.eps, weight_decay: self.weight_decay }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub patience: usize,
    pub factor: f64,
    pub max_drops: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { patience: 50, factor: 10.0, max_drops: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// When to oversample naturals and undersample each manipulation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RebalanceMode {
    /// Only when the training split holds more than one manipulation method.
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub scheduler: SchedulerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Frame step inside training windows.
    pub train_stride: usize,
    /// Frame step inside scoring and validation windows.
    pub eval_stride: usize,
    pub precision: Precision,
    pub rebalance: RebalanceMode,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            scheduler: SchedulerConfig::default(),
            epochs: 30,
            batch_size: 16,
            train_stride: 1,
            eval_stride: 7,
            precision: Precision::F32,
            rebalance: RebalanceMode::Auto,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        let (d, m) = (&self.data, &self.model);
        ensure!(
            (d.channels, d.height, d.width) == (m.channels, m.height, m.width),
            Config,
            "data frames are {}×{}×{} but the model expects {}×{}×{}",
            d.channels,
            d.height,
            d.width,
            m.channels,
            m.height,
            m.width
        );
        ensure!(self.batch_size >= 1, Config, "batch size must be positive");
        ensure!(self.train_stride >= 1 && self.eval_stride >= 1, Config, "strides must be positive");
        ensure!(
            window_len(m.frames, self.train_stride) <= d.frames,
            Config,
            "training windows span {} frames, videos have {}",
            window_len(m.frames, self.train_stride),
            d.frames
        );
        let (r_minus, r_plus) = self.loss.radii(m.embedding_dim());
        ensure!(0.0 < r_minus && r_minus < r_plus, Config, "radii must satisfy 0 < r- < r+, got {} and {}", r_minus, r_plus);
        let o = &self.optimizer;
        ensure!(o.lr > 0.0 && o.eps > 0.0 && o.weight_decay >= 0.0, Config, "optimizer rate, eps and decay out of range");
        ensure!(o.betas.iter().all(|b| (0.0..1.0).contains(b)), Config, "Adam betas must lie in [0, 1)");
        ensure!(self.scheduler.factor > 1.0 && self.scheduler.patience >= 1, Config, "scheduler factor must exceed 1");
        Ok(())
    }

    /// Whether the epoch plan applies class rebalancing on `dataset`.
    pub fn rebalances(&self, dataset: &Dataset) -> bool {
        match self.rebalance {
            RebalanceMode::Always => true,
            RebalanceMode::Never => false,
            RebalanceMode::Auto => {
                let kinds: std::collections::BTreeSet<&str> = dataset
                    .manifest
                    .videos
                    .iter()
                    .filter(|v| v.split == Split::Train)
                    .filter_map(|v| v.kind.as_deref())
                    .collect();
                kinds.len() > 1
            }
        }
    }
}

fn window_len(f: usize, stride: usize) -> usize {
    (f - 1) * stride + 1
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_auc: f64,
    /// Global rate used during this epoch.
    pub lr: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation checkpoint, or the initialized one when no epoch ran.
    pub checkpoint: Checkpoint<f64>,
    pub log: Vec<EpochLog>,
    /// Zero-based epoch of the retained checkpoint.
    pub best_epoch: Option<usize>,
}

/// Trains a model on `dataset` as configured.
pub fn train(config: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(config, dataset)?;
    match config.precision {
        Precision::F32 => train_impl::<f32>(config, dataset),
        Precision::F64 => train_impl::<f64>(config, dataset),
    }
}

fn check_dataset(config: &RunConfig, dataset: &Dataset) -> Result<()> {
    let m = &config.model;
    let d = &dataset.manifest.config;
    ensure!(
        (d.channels, d.height, d.width) == (m.channels, m.height, m.width),
        Shape,
        "dataset frames are {}×{}×{} but the model expects {}×{}×{}",
        d.channels,
        d.height,
        d.width,
        m.channels,
        m.height,
        m.width
    );
    for split in [Split::Train, Split::Valid] {
        for label in [Label::Natural, Label::Manipulated] {
            ensure!(dataset.manifest.count(split, label) > 0, Data, "{} split has no {:?} videos", split, label);
        }
    }
    Ok(())
}

/// Eval-mode windows of every video in `split`, in manifest order.
pub fn split_sequences(dataset: &Dataset, split: Split, f: usize, stride: usize) -> Result<Vec<FaceSequence>> {
    let mut out = Vec::new();
    for i in dataset.manifest.indices(split) {
        let v = &dataset.manifest.videos[i];
        out.extend(eval_sequences(dataset.video(i), &v.video_id, v.label, f, stride)?);
    }
    Ok(out)
}

fn embed_all<T: Real>(model: &Model<T>, seqs: &[FaceSequence]) -> Result<Vec<Vec<f64>>> {
    seqs.iter().map(|s| model.embed(s)).collect()
}

fn train_impl<T: Real>(config: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let f = config.model.frames;
    let mut model = Model::<T>::build(&config.model, derive_seed(config.seed, "model", 0))?;
    model.assign_lr_scales();

    let natural_train: Vec<FaceSequence> = split_sequences(dataset, Split::Train, f, config.eval_stride)?
        .into_iter()
        .filter(|s| s.label == Label::Natural)
        .collect();
    let center = compute_center(&embed_all(&model, &natural_train)?)?;
    let (r_minus, r_plus) = config.loss.radii(model.embedding_dim());
    let sphere = HypersphereSpec::new(center, r_minus, r_plus)?;

    let valid = split_sequences(dataset, Split::Valid, f, config.eval_stride)?;
    let valid_part = BatchPartition::from_labels(&valid.iter().map(|s| s.label).collect::<Vec<_>>())?;
    let plan = if config.rebalances(dataset) { Some(rebalance(&dataset.manifest, Split::Train)?) } else { None };

    let mut adam = Adam::<T>::new(config.optimizer.adam());
    let s = &config.scheduler;
    let mut scheduler = PlateauScheduler::new(config.optimizer.lr, s.patience, s.factor, s.max_drops);
    let mut lr = config.optimizer.lr;
    let mut best: Option<(f64, f64, Model<T>, usize)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    let span = window_len(f, config.train_stride);

    for epoch in 0..config.epochs {
        let e = epoch as u64;
        let windows = match &plan {
            Some(p) => weighted_epoch_plan(&dataset.manifest, Split::Train, span, config.seed, e, p)?,
            None => epoch_plan(&dataset.manifest, Split::Train, span, config.seed, e)?,
        };
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "dropout", e));
        let mut losses = Vec::new();
        for batch in windows.chunks(config.batch_size) {
            let seqs = batch
                .iter()
                .map(|&(i, start)| {
                    let v = &dataset.manifest.videos[i];
                    FaceSequence::cut(dataset.video(i), &v.video_id, v.label, start, f, config.train_stride)
                })
                .collect::<Result<Vec<_>>>()?;
            losses.push(train_step(&mut model, &mut adam, &seqs, &sphere, lr, &mut dropout_rng)?);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;

        let valid_emb = embed_all(&model, &valid)?;
        let valid_loss = isolation_loss(&valid_emb, &valid_part, &sphere)?;
        let records = score_embeddings(&valid, &valid_emb, &sphere)?;
        let valid_auc = auc(&roc(&records)?);
        let improved = match &best {
            None => true,
            Some((a, l, _, _)) => valid_auc > *a || (valid_auc == *a && valid_loss < *l),
        };
        if improved {
            best = Some((valid_auc, valid_loss, model.clone(), epoch));
        }
        log.push(EpochLog { epoch, train_loss, valid_loss, valid_auc, lr, best: improved });
        log::info!("epoch {epoch}: train {train_loss:.5} valid {valid_loss:.5} auc {valid_auc:.4} lr {lr:e}");
        lr = scheduler.observe(valid_loss);
    }

    let (kept, best_epoch) = match best {
        Some((_, _, m, e)) => (m, Some(e)),
        None => (model, None),
    };
    let meta = serde_json::json!({
        "seed": config.seed,
        "precision": config.precision,
        "epochs": config.epochs,
        "best_epoch": best_epoch,
    });
    Ok(TrainOutcome { checkpoint: Checkpoint { model: kept.cast(), hypersphere: sphere, meta }, log, best_epoch })
}

/// One optimizer step on a mini-batch; returns the batch loss.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    adam: &mut Adam<T>,
    batch: &[FaceSequence],
    sphere: &HypersphereSpec,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tapes = Vec::with_capacity(batch.len());
    let mut embs = Vec::with_capacity(batch.len());
    for seq in batch {
        let (e, tape) = model.forward(&seq.frames.cast(), Mode::Train, rng)?;
        embs.push(e.data().iter().map(|v| v.f64()).collect::<Vec<f64>>());
        tapes.push(tape);
    }
    let part = BatchPartition::from_labels(&batch.iter().map(|s| s.label).collect::<Vec<_>>())?;
    let loss = isolation_loss(&embs, &part, sphere)?;
    let grads = isolation_loss_grad(&embs, &part, sphere)?;
    model.zero_grad();
    for (tape, g) in tapes.iter().zip(grads) {
        let g: Tensor<f64> = Tensor::vector(g);
        model.backward(tape, &g.cast());
    }
    let mut params: Vec<_> = model.params_mut().into_iter().map(|(_, p)| p).collect();
    adam.step(&mut params, lr)?;
    Ok(loss)
}

fn score_embeddings(seqs: &[FaceSequence], embs: &[Vec<f64>], sphere: &HypersphereSpec) -> Result<Vec<ScoreRecord>> {
    let mut records = Vec::with_capacity(seqs.len());
    let mut index = 0;
    for (k, (s, e)) in seqs.iter().zip(embs).enumerate() {
        if k > 0 && seqs[k - 1].video_id != s.video_id {
            index = 0;
        }
        records.push(ScoreRecord::new(s.video_id.clone(), index, anomaly_score(e, sphere)?, s.label));
        index += 1;
    }
    Ok(records)
}

/// Score and frame span of one inference window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub video_id: String,
    pub sequence_index: usize,
    pub first_frame: usize,
    pub last_frame: usize,
    pub stride: usize,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone)]
pub struct Scores {
    pub records: Vec<ScoreRecord>,
    pub windows: Vec<WindowRecord>,
}

/// Scores every inference window of `split`. The model runs in the
/// precision recorded in the checkpoint metadata (32-bit when absent).
pub fn score(checkpoint: &Checkpoint<f64>, dataset: &Dataset, split: Split, stride: usize) -> Result<Scores> {
    let cfg = checkpoint.model.config();
    let d = &dataset.manifest.config;
    ensure!(
        (d.channels, d.height, d.width) == (cfg.channels, cfg.height, cfg.width),
        Shape,
        "dataset frames are {}×{}×{} but the checkpoint expects {}×{}×{}",
        d.channels,
        d.height,
        d.width,
        cfg.channels,
        cfg.height,
        cfg.width
    );
    let seqs = split_sequences(dataset, split, cfg.frames, stride)?;
    let precision = checkpoint.meta.get("precision").and_then(|p| serde_json::from_value(p.clone()).ok()).unwrap_or(Precision::F32);
    let embs = match precision {
        Precision::F32 => embed_all(&checkpoint.model.cast::<f32>(), &seqs)?,
        Precision::F64 => embed_all(&checkpoint.model, &seqs)?,
    };
    let records = score_embeddings(&seqs, &embs, &checkpoint.hypersphere)?;
    let windows = seqs
        .iter()
        .zip(&records)
        .map(|(s, r)| WindowRecord {
            video_id: r.video_id.clone(),
            sequence_index: r.sequence_index,
            first_frame: s.start_index,
            last_frame: s.start_index + (s.len() - 1) * s.stride,
            stride: s.stride,
            score: r.score,
            label: r.label.code(),
        })
        .collect();
    Ok(Scores { records, windows })
}

pub fn write_windows_csv<W: Write>(out: W, windows: &[WindowRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in windows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the log as JSON lines.
pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in log {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
