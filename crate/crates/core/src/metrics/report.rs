use std::collections::BTreeMap;

use serde::Serialize;

use super::{
    auc, log_weighted_precision, pauc_standardized, roc, tar_at_far, tauc, video_level, ScoreRecord, TaucMode,
    WeightedPrecision, DEFAULT_ALPHA, DEFAULT_GRID,
};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub cutoffs: Vec<f64>,
    pub recalls: Vec<f64>,
    pub tauc_mode: TaucMode,
    pub alpha: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { cutoffs: vec![0.1], recalls: vec![0.1, 0.5, 0.9], tauc_mode: TaucMode::Grid(DEFAULT_GRID), alpha: DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffMetrics {
    pub pauc: f64,
    pub tauc: f64,
    pub tar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub count: usize,
    pub natural: usize,
    pub manipulated: usize,
    pub auc: f64,
    /// Keyed by FAR cutoff.
    pub at_far: BTreeMap<String, CutoffMetrics>,
    /// Keyed by recall target.
    pub log_wp: BTreeMap<String, WeightedPrecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub sequence: LevelReport,
    pub video: LevelReport,
}

fn level(records: &[ScoreRecord], opts: &EvalOptions) -> Result<LevelReport> {
    let curve = roc(records)?;
    let mut at_far = BTreeMap::new();
    for &f in &opts.cutoffs {
        at_far.insert(
            f.to_string(),
            CutoffMetrics { pauc: pauc_standardized(&curve, f)?, tauc: tauc(&curve, f, opts.tauc_mode)?, tar: tar_at_far(&curve, f)? },
        );
    }
    let mut log_wp = BTreeMap::new();
    for &r in &opts.recalls {
        log_wp.insert(r.to_string(), log_weighted_precision(records, r, opts.alpha)?);
    }
    Ok(LevelReport {
        count: records.len(),
        natural: curve.negatives() as usize,
        manipulated: curve.positives() as usize,
        auc: auc(&curve),
        at_far,
        log_wp,
    })
}

/// Sequence-level and video-level metric blocks for one score file.
pub fn evaluate(records: &[ScoreRecord], opts: &EvalOptions) -> Result<EvalReport> {
    Ok(EvalReport { sequence: level(records, opts)?, video: level(&video_level(records)?, opts)? })
}
