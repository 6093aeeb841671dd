//! Synthetic video corpus, dataset persistence and sequence sampling.
//!
//! A dataset directory holds `manifest.json` and one tensor file per video
//! under `videos/`, stored as `f32` `[T, C, H, W]` in `[0, 1]`.

mod sampling;
mod synth;

pub use sampling::{
    epoch_plan, eval_sequences, rebalance, rebalance_counts, sample_classes, stratified_epoch, weighted_epoch_plan,
    FaceSequence, RebalancePlan,
};
pub use synth::{manipulate, region_band_power, render_natural, FaceTrack, MANIPULATION_KERNEL};

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::loglayer::{LogConfig, LogSpec};
use crate::seed::derive_seed;
use crate::tensor::{self, Tensor};
use crate::Label;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?} (train, valid, test)"))),
        }
    }
}

/// One manipulation method; methods differ in the smoothing they apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulationKind {
    pub name: String,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub natural: usize,
    pub manipulated: usize,
    /// Frames per video.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Artifact strength is drawn uniformly from `[min, max]`.
    pub strength_min: f64,
    pub strength_max: f64,
    /// Manipulated videos are assigned to methods round-robin.
    pub manipulations: Vec<ManipulationKind>,
    pub train_fraction: f64,
    pub valid_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            natural: 100,
            manipulated: 100,
            frames: 64,
            height: 32,
            width: 32,
            channels: 3,
            strength_min: 1.0,
            strength_max: 1.0,
            manipulations: vec![ManipulationKind { name: "resample".into(), sigma: 1.0 }],
            train_fraction: 0.6,
            valid_fraction: 0.2,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.natural + self.manipulated > 0, Config, "dataset needs at least one video");
        ensure!(self.frames >= 1, Config, "videos need at least one frame");
        ensure!(
            self.height >= MANIPULATION_KERNEL && self.width >= MANIPULATION_KERNEL,
            Config,
            "frames must be at least {0}×{0}, got {1}×{2}",
            MANIPULATION_KERNEL,
            self.height,
            self.width
        );
        ensure!(self.channels >= 1, Config, "videos need at least one channel");
        ensure!(
            0.0 < self.strength_min && self.strength_min <= self.strength_max && self.strength_max <= 1.0,
            Config,
            "artifact strength range must satisfy 0 < min <= max <= 1, got [{}, {}]",
            self.strength_min,
            self.strength_max
        );
        ensure!(self.manipulated == 0 || !self.manipulations.is_empty(), Config, "manipulated videos need a manipulation kind");
        ensure!(self.manipulations.iter().all(|m| m.sigma > 0.0), Config, "manipulation sigma must be positive");
        let names: BTreeSet<&str> = self.manipulations.iter().map(|m| m.name.as_str()).collect();
        ensure!(names.len() == self.manipulations.len(), Config, "manipulation names must be unique");
        ensure!(
            self.train_fraction > 0.0 && self.valid_fraction >= 0.0 && self.train_fraction + self.valid_fraction <= 1.0,
            Config,
            "split fractions must be non-negative, train positive, and sum to at most 1"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub video_id: String,
    pub label: Label,
    pub split: Split,
    pub frames: usize,
    /// Path of the tensor file relative to the dataset directory.
    pub file: String,
    /// Manipulation method, absent for natural videos.
    pub kind: Option<String>,
    /// Artifact strength, 0 for natural videos.
    pub strength: f64,
    /// Seed the source video was rendered from.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config: DataConfig,
    pub videos: Vec<VideoEntry>,
}

impl DatasetManifest {
    /// Validates ids and split assignment. A video id may appear only once,
    /// so no identity can leak across splits.
    pub fn new(seed: u64, config: DataConfig, videos: Vec<VideoEntry>) -> Result<Self> {
        let m = DatasetManifest { version: MANIFEST_VERSION, seed, config, videos };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.version == MANIFEST_VERSION, Data, "unsupported manifest version {}", self.version);
        let mut ids = BTreeSet::new();
        for v in &self.videos {
            ensure!(ids.insert(v.video_id.as_str()), Data, "video id {} appears more than once", v.video_id);
            ensure!(
                v.label.is_manipulated() == v.kind.is_some() && (v.strength > 0.0) == v.label.is_manipulated(),
                Data,
                "video {} has inconsistent manipulation metadata",
                v.video_id
            );
        }
        let files: BTreeSet<&str> = self.videos.iter().map(|v| v.file.as_str()).collect();
        ensure!(files.len() == self.videos.len(), Data, "video files must be distinct");
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.videos.len()).filter(|&i| self.videos[i].split == split).collect()
    }

    pub fn count(&self, split: Split, label: Label) -> usize {
        self.videos.iter().filter(|v| v.split == split && v.label == label).count()
    }
}

/// Manifest plus decoded videos, aligned by index.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    videos: Vec<Tensor<f32>>,
}

fn video_file(id: &str) -> String {
    format!("videos/{id}.isof")
}

/// Shuffles `ids` and cuts them into train / valid / test.
fn assign_splits(n: usize, cfg: &DataConfig, rng: &mut ChaCha8Rng) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = (cfg.train_fraction * n as f64).round() as usize;
    let n_valid = ((cfg.valid_fraction * n as f64).round() as usize).min(n - n_train.min(n));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    splits
}

impl Dataset {
    /// Renders the corpus in memory. Every video is generated from a seed
    /// derived from `(seed, video_id)`, so videos are independent of each
    /// other and of generation order.
    pub fn generate(config: &DataConfig, seed: u64) -> Result<Dataset> {
        config.validate()?;
        let c = config;
        let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "splits", 0));
        let nat_splits = assign_splits(c.natural, c, &mut split_rng);
        let man_splits = assign_splits(c.manipulated, c, &mut split_rng);
        let mut entries = Vec::with_capacity(c.natural + c.manipulated);
        let mut videos = Vec::with_capacity(c.natural + c.manipulated);
        for (i, &split) in nat_splits.iter().enumerate() {
            let id = format!("nat-{i:04}");
            let s = derive_seed(seed, &id, 0);
            let (v, _) = render_natural(c.frames, c.channels, c.height, c.width, s);
            videos.push(v.cast());
            entries.push(VideoEntry {
                file: video_file(&id),
                video_id: id,
                label: Label::Natural,
                split,
                frames: c.frames,
                kind: None,
                strength: 0.0,
                seed: s,
            });
        }
        for (i, &split) in man_splits.iter().enumerate() {
            let id = format!("man-{i:04}");
            let s = derive_seed(seed, &id, 0);
            let kind = &c.manipulations[i % c.manipulations.len()];
            let strength = if c.strength_max > c.strength_min {
                ChaCha8Rng::seed_from_u64(derive_seed(s, "strength", 0)).gen_range(c.strength_min..=c.strength_max)
            } else {
                c.strength_min
            };
            let (v, track) = render_natural(c.frames, c.channels, c.height, c.width, s);
            videos.push(manipulate(&v, &track, strength, kind.sigma)?.cast());
            entries.push(VideoEntry {
                file: video_file(&id),
                video_id: id,
                label: Label::Manipulated,
                split,
                frames: c.frames,
                kind: Some(kind.name.clone()),
                strength,
                seed: s,
            });
        }
        Ok(Dataset { manifest: DatasetManifest::new(seed, config.clone(), entries)?, videos })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("videos"))?;
        for (entry, video) in self.manifest.videos.iter().zip(&self.videos) {
            tensor::io::save(&dir.join(&entry.file), video)?;
        }
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest = read_manifest(dir)?;
        let c = &manifest.config;
        let mut videos = Vec::with_capacity(manifest.videos.len());
        for entry in &manifest.videos {
            let path: PathBuf = dir.join(&entry.file);
            let v: Tensor<f32> = tensor::io::load(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            ensure!(
                v.shape() == [entry.frames, c.channels, c.height, c.width],
                Data,
                "{} has shape {:?}, manifest says [{}, {}, {}, {}]",
                path.display(),
                v.shape(),
                entry.frames,
                c.channels,
                c.height,
                c.width
            );
            videos.push(v);
        }
        Ok(Dataset { manifest, videos })
    }

    pub fn video(&self, index: usize) -> &Tensor<f32> {
        &self.videos[index]
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Generates a corpus and writes it to `dir`.
pub fn generate(config: &DataConfig, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    let ds = Dataset::generate(config, seed)?;
    ds.save(dir)?;
    Ok(ds.manifest)
}

/// Mean single-scale bandpass power inside the manipulated region, for
/// natural sources and for their manipulated versions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyGap {
    pub natural: f64,
    pub manipulated: f64,
    pub videos: usize,
}

impl EnergyGap {
    /// Power removed by the manipulation; positive when the artifact is learnable.
    pub fn gap(&self) -> f64 {
        self.natural - self.manipulated
    }
}

/// Measures the high-frequency power the manipulation removes, averaged
/// over `videos` fresh sources rendered at full strength.
pub fn energy_gap(config: &DataConfig, seed: u64, videos: usize) -> Result<EnergyGap> {
    config.validate()?;
    ensure!(videos > 0, InvalidArgument, "need at least one video");
    let spec = LogSpec::from_config(&LogConfig { scales: 1, ..Default::default() })?;
    let sigma = config.manipulations.first().map_or(1.0, |m| m.sigma);
    let (mut natural, mut manipulated) = (0.0, 0.0);
    for i in 0..videos {
        let s = derive_seed(seed, "energy-gap", i as u64);
        let (v, track) = render_natural(config.frames.min(8), config.channels, config.height, config.width, s);
        let m = manipulate(&v, &track, 1.0, sigma)?;
        natural += region_band_power(&v, &track, &spec)?;
        manipulated += region_band_power(&m, &track, &spec)?;
    }
    Ok(EnergyGap { natural: natural / videos as f64, manipulated: manipulated / videos as f64, videos })
}
