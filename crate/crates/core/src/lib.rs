//! Deepfake isolation with a two-branch Laplacian-of-Gaussian network and a
//! two-radii hypersphere loss, plus low false-alarm evaluation metrics.
//!
//! Module map:
//! - [`tensor`]: dense arrays, fixed Gaussian/resampling filters, tensor files.
//! - [`nn`]: learnable layers with analytic gradients, Adam, plateau schedule.
//! - [`loglayer`]: the multi-scale bandpass bottleneck.
//! - [`loss`]: hypersphere isolation loss, reference center and anomaly score.
//! - [`model`]: the two-branch recurrent detector.
//! - [`data`]: synthetic video corpus, stratified epochs, rebalancing.
//! - [`metrics`]: ROC, AUC, pAUC, tAUC, TAR@FAR, log(wP), histograms.
//! - [`train`]: run configuration and the training / scoring pipeline.
//! - [`gradcheck`]: finite-difference verification of every backward pass.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod label;
pub mod loglayer;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use label::Label;
pub use tensor::{Real, Tensor};
