use std::fmt::Write as _;

use serde::Serialize;

use super::ScoreRecord;
use crate::error::{ensure, Result};

/// Genuine (natural) and impostor (manipulated) score distributions over a
/// shared binning, each normalized to unit mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub natural: Vec<f64>,
    pub manipulated: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.natural.len()
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.bins();
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }

    /// `Σ min(p, q)` over bins: 0 for disjoint distributions, 1 for equal ones.
    pub fn overlap(&self) -> f64 {
        self.natural.iter().zip(&self.manipulated).map(|(p, q)| p.min(*q)).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,natural,manipulated\n");
        let e = self.edges();
        for i in 0..self.bins() {
            writeln!(out, "{},{},{},{}", e[i], e[i + 1], self.natural[i], self.manipulated[i]).expect("write to string");
        }
        out
    }
}

/// Bins all scores over their common range. With a degenerate range every
/// score lands in the first bin.
pub fn histogram_export(records: &[ScoreRecord], bins: usize) -> Result<Histogram> {
    ensure!(bins >= 1, InvalidArgument, "need at least one bin");
    ensure!(!records.is_empty(), InvalidArgument, "no records to bin");
    ensure!(records.iter().all(|r| r.score.is_finite()), InvalidArgument, "scores must be finite");
    let lo = records.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
    let mut natural = vec![0.0; bins];
    let mut manipulated = vec![0.0; bins];
    for r in records {
        let k = if hi > lo { (((r.score - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1) } else { 0 };
        if r.label.is_manipulated() {
            manipulated[k] += 1.0;
        } else {
            natural[k] += 1.0;
        }
    }
    for h in [&mut natural, &mut manipulated] {
        let total: f64 = h.iter().sum();
        if total > 0.0 {
            h.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(Histogram { lo, hi, natural, manipulated })
}
