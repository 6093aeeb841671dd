//! Evaluation at low false-alarm rates.
//!
//! Scores follow the anomaly convention: higher means more likely
//! manipulated, and a record is flagged when `score >= threshold`.

mod histogram;
mod plot;
mod precision;
mod records;
mod report;
mod roc;

pub use histogram::{histogram_export, Histogram};
pub use plot::{histogram_svg, roc_svg};
pub use precision::{log_weighted_precision, WeightedPrecision, DEFAULT_ALPHA};
pub use records::{read_scores_csv, video_level, write_scores_csv, ScoreRecord};
pub use report::{evaluate, CutoffMetrics, EvalOptions, EvalReport, LevelReport};
pub use roc::{auc, auc_rank, pauc_standardized, roc, tar_at_far, tauc, RocCurve, RocPoint, TaucMode, DEFAULT_GRID};
