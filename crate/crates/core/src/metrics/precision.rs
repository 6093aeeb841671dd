use serde::Serialize;

use super::ScoreRecord;
use crate::error::{ensure, Result};

/// Weight given to true positives in the weighted precision.
pub const DEFAULT_ALPHA: f64 = 100.0;

/// Best operating point at a recall target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedPrecision {
    /// `log10(α·TP / (α·TP + FP))`; 0 when there are no false positives.
    pub log_wp: f64,
    pub recall: f64,
    pub threshold: f64,
    pub true_positives: u64,
    pub false_positives: u64,
}

/// Among thresholds whose recall reaches `recall_target`, picks the one with
/// the highest weighted precision (ties: higher recall). The lowest threshold
/// flags everything, so any target in `(0, 1]` is reachable.
pub fn log_weighted_precision(records: &[ScoreRecord], recall_target: f64, alpha: f64) -> Result<WeightedPrecision> {
    ensure!(recall_target > 0.0 && recall_target <= 1.0, InvalidArgument, "recall target must lie in (0, 1], got {}", recall_target);
    ensure!(alpha > 0.0 && alpha.is_finite(), InvalidArgument, "alpha must be positive, got {}", alpha);
    ensure!(records.iter().all(|r| r.score.is_finite()), InvalidArgument, "scores must be finite");
    let positives = records.iter().filter(|r| r.label.is_manipulated()).count() as u64;
    ensure!(positives > 0 && positives < records.len() as u64, InvalidArgument, "weighted precision needs both classes");

    let mut order: Vec<&ScoreRecord> = records.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best: Option<(u64, u64, f64)> = None;
    let mut i = 0;
    while i < order.len() {
        let t = order[i].score;
        while i < order.len() && order[i].score == t {
            if order[i].label.is_manipulated() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if (tp as f64 / positives as f64) < recall_target {
            continue;
        }
        // fp/tp is the only thing α·TP/(α·TP+FP) depends on; compare it exactly.
        let better = match best {
            None => true,
            Some((btp, bfp, _)) => {
                let (lhs, rhs) = (fp as u128 * btp as u128, bfp as u128 * tp as u128);
                lhs < rhs || (lhs == rhs && tp > btp)
            }
        };
        if better {
            best = Some((tp, fp, t));
        }
    }
    let (tp, fp, threshold) = best.expect("lowest threshold reaches full recall");
    let wp = alpha * tp as f64 / (alpha * tp as f64 + fp as f64);
    Ok(WeightedPrecision {
        log_wp: if fp == 0 { 0.0 } else { wp.log10() },
        recall: tp as f64 / positives as f64,
        threshold,
        true_positives: tp,
        false_positives: fp,
    })
}
