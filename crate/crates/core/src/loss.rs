//! Two-radii hypersphere isolation loss.
//!
//! Natural embeddings are pulled inside radius `r⁻` around a fixed center,
//! manipulated ones pushed outside `r⁺`:
//!
//! ```text
//! L = mean_{i ∈ nat} max(0, ‖e_i − c‖ − r⁻) + mean_{j ∈ man} max(0, r⁺ − ‖e_j − c‖)
//! ```
//!
//! Each term is normalized by its own class count, and an empty class
//! contributes nothing. The anomaly score of an embedding is its distance to
//! the center.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::label::Label;

/// Below this distance the radial direction is treated as undefined.
const CENTER_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypersphereSpec {
    center: Vec<f64>,
    r_minus: f64,
    r_plus: f64,
}

impl HypersphereSpec {
    pub fn new(center: Vec<f64>, r_minus: f64, r_plus: f64) -> Result<Self> {
        ensure!(!center.is_empty(), InvalidArgument, "center must be non-empty");
        ensure!(center.iter().all(|v| v.is_finite()), InvalidArgument, "center must be finite");
        ensure!(
            0.0 < r_minus && r_minus < r_plus && r_plus.is_finite(),
            InvalidArgument,
            "radii must satisfy 0 < r- < r+, got {} and {}",
            r_minus,
            r_plus
        );
        Ok(HypersphereSpec { center, r_minus, r_plus })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn r_minus(&self) -> f64 {
        self.r_minus
    }

    pub fn r_plus(&self) -> f64 {
        self.r_plus
    }

    pub fn margin(&self) -> f64 {
        self.r_plus - self.r_minus
    }
}

/// Indices of the natural and manipulated members of a mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPartition {
    pub natural: Vec<usize>,
    pub manipulated: Vec<usize>,
}

impl BatchPartition {
    pub fn new(natural: Vec<usize>, manipulated: Vec<usize>) -> Result<Self> {
        ensure!(!(natural.is_empty() && manipulated.is_empty()), InvalidArgument, "both partitions are empty");
        ensure!(
            natural.iter().all(|i| !manipulated.contains(i)),
            InvalidArgument,
            "partitions must be disjoint"
        );
        Ok(BatchPartition { natural, manipulated })
    }

    pub fn from_labels(labels: &[Label]) -> Result<Self> {
        let pick = |want: Label| labels.iter().enumerate().filter(|(_, &l)| l == want).map(|(i, _)| i).collect();
        BatchPartition::new(pick(Label::Natural), pick(Label::Manipulated))
    }

    fn max_index(&self) -> Option<usize> {
        self.natural.iter().chain(&self.manipulated).copied().max()
    }
}

/// Exactly rounded floating-point sum (Shewchuk's partials algorithm).
pub(crate) fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    // Round the partials to the nearest double, as in Python's math.fsum.
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Mean of the given embeddings.
pub fn compute_center(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    ensure!(!embeddings.is_empty(), InvalidArgument, "cannot average zero embeddings");
    let dim = embeddings[0].len();
    ensure!(dim > 0, InvalidArgument, "embeddings must be non-empty");
    ensure!(embeddings.iter().all(|e| e.len() == dim), Shape, "embedding dimensions differ");
    let n = embeddings.len() as f64;
    Ok((0..dim).map(|k| exact_sum(embeddings.iter().map(|e| e[k])) / n).collect())
}

/// Euclidean distance to the center; larger means more likely manipulated.
pub fn anomaly_score(e: &[f64], spec: &HypersphereSpec) -> Result<f64> {
    ensure!(e.len() == spec.dim(), Shape, "embedding has dimension {}, center {}", e.len(), spec.dim());
    Ok(distance(e, &spec.center))
}

fn distance(e: &[f64], c: &[f64]) -> f64 {
    e.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn validate(embeddings: &[Vec<f64>], partition: &BatchPartition, spec: &HypersphereSpec) -> Result<()> {
    ensure!(
        partition.max_index().is_some_and(|m| m < embeddings.len()),
        InvalidArgument,
        "partition indexes outside the batch of {}",
        embeddings.len()
    );
    ensure!(embeddings.iter().all(|e| e.len() == spec.dim()), Shape, "embedding dimension differs from center");
    Ok(())
}

pub fn isolation_loss(embeddings: &[Vec<f64>], partition: &BatchPartition, spec: &HypersphereSpec) -> Result<f64> {
    validate(embeddings, partition, spec)?;
    let class_mean = |idx: &[usize], hinge: &dyn Fn(f64) -> f64| {
        if idx.is_empty() {
            0.0
        } else {
            exact_sum(idx.iter().map(|&i| hinge(distance(&embeddings[i], &spec.center)))) / idx.len() as f64
        }
    };
    let nat = class_mean(&partition.natural, &|d| (d - spec.r_minus).max(0.0));
    let man = class_mean(&partition.manipulated, &|d| (spec.r_plus - d).max(0.0));
    Ok(nat + man)
}

/// Per-embedding (sub)gradient of [`isolation_loss`]. Inactive hinges,
/// exact hinge boundaries and embeddings at the center get zero.
pub fn isolation_loss_grad(
    embeddings: &[Vec<f64>],
    partition: &BatchPartition,
    spec: &HypersphereSpec,
) -> Result<Vec<Vec<f64>>> {
    validate(embeddings, partition, spec)?;
    let dim = spec.dim();
    let mut grads = vec![vec![0.0; dim]; embeddings.len()];
    let mut fill = |idx: &[usize], sign: f64, active: &dyn Fn(f64) -> bool| {
        let weight = sign / idx.len().max(1) as f64;
        for &i in idx {
            let d = distance(&embeddings[i], &spec.center);
            if d < CENTER_EPS || !active(d) {
                continue;
            }
            for k in 0..dim {
                grads[i][k] += weight * (embeddings[i][k] - spec.center[k]) / d;
            }
        }
    };
    fill(&partition.natural, 1.0, &|d| d > spec.r_minus);
    fill(&partition.manipulated, -1.0, &|d| d < spec.r_plus);
    Ok(grads)
}

/// Which hinges are active, in partition order. Used to keep finite
/// difference probes away from kinks.
pub fn hinge_pattern(embeddings: &[Vec<f64>], partition: &BatchPartition, spec: &HypersphereSpec) -> Vec<bool> {
    let nat = partition.natural.iter().map(|&i| distance(&embeddings[i], &spec.center) > spec.r_minus);
    let man = partition.manipulated.iter().map(|&i| distance(&embeddings[i], &spec.center) < spec.r_plus);
    nat.chain(man).collect()
}

/// Radii rescaled from a reference embedding dimension by `sqrt(dim / ref_dim)`.
pub fn scaled_radii(r_minus: f64, r_plus: f64, ref_dim: usize, dim: usize) -> (f64, f64) {
    let s = (dim as f64 / ref_dim as f64).sqrt();
    (r_minus * s, r_plus * s)
}
