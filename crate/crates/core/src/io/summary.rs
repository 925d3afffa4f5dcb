//! Posterior summaries and sample-set comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smc::bhattacharyya;
use crate::stats;

/// Default central 95% interval.
pub const DEFAULT_LEVELS: [(f64, f64); 1] = [(0.025, 0.975)];
pub const SURVIVAL_GRID_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower_q: f64,
    pub upper_q: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub intervals: Vec<Interval>,
    /// `(x, S(x))` on an even grid from the sample minimum to its maximum.
    pub survival: Vec<(f64, f64)>,
}

/// Fraction of an ascending sample strictly greater than `x`.
pub fn survival_sorted(sorted: &[f64], x: f64) -> f64 {
    let above = sorted.len() - sorted.partition_point(|&v| v <= x);
    above as f64 / sorted.len() as f64
}

pub fn summarize(samples: &[f64], levels: &[(f64, f64)]) -> Result<Summary> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot summarize an empty sample".into()));
    }
    let sorted = stats::sorted(samples)?;
    let intervals = levels
        .iter()
        .map(|&(lo, hi)| {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::Contract(format!("bad quantile pair ({lo}, {hi})")));
            }
            Ok(Interval {
                lower_q: lo,
                upper_q: hi,
                lower: stats::quantile_sorted(&sorted, lo),
                upper: stats::quantile_sorted(&sorted, hi),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let survival = (0..SURVIVAL_GRID_POINTS)
        .map(|i| {
            let x = min + (max - min) * i as f64 / (SURVIVAL_GRID_POINTS - 1) as f64;
            (x, survival_sorted(&sorted, x))
        })
        .collect();
    Ok(Summary {
        n: samples.len(),
        mean: stats::mean(samples),
        intervals,
        survival,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalComparison {
    pub ks: f64,
    /// `|mean(a) - mean(b)|`.
    pub mean_gap: f64,
    /// Absolute gaps between matching 95% interval endpoints.
    pub lower_gap: f64,
    pub upper_gap: f64,
    #[serde(with = "super::extended_float")]
    pub bhattacharyya: f64,
}

impl MarginalComparison {
    pub fn max_interval_gap(&self) -> f64 {
        self.lower_gap.max(self.upper_gap)
    }
}

pub fn compare_marginal(a: &[f64], b: &[f64], bins: usize) -> Result<MarginalComparison> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("cannot compare an empty sample".into()));
    }
    let sa = summarize(a, &DEFAULT_LEVELS)?;
    let sb = summarize(b, &DEFAULT_LEVELS)?;
    Ok(MarginalComparison {
        ks: stats::ks_sorted(&stats::sorted(a)?, &stats::sorted(b)?),
        mean_gap: (sa.mean - sb.mean).abs(),
        lower_gap: (sa.intervals[0].lower - sb.intervals[0].lower).abs(),
        upper_gap: (sa.intervals[0].upper - sb.intervals[0].upper).abs(),
        bhattacharyya: bhattacharyya(a, b, bins)?,
    })
}

/// Per-marginal comparison of two sample sets given as rows of equal
/// dimension.
pub fn compare_sample_sets(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    bins: usize,
) -> Result<Vec<MarginalComparison>> {
    let dim = |rows: &[Vec<f64>]| -> Result<usize> {
        let d = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Contract("cannot compare an empty sample".into()))?;
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Contract("ragged sample rows".into()));
        }
        Ok(d)
    };
    let d = dim(a)?;
    if dim(b)? != d {
        return Err(Error::Contract(format!(
            "sample sets have dimensions {d} and {}",
            b[0].len()
        )));
    }
    (0..d)
        .map(|j| {
            let ca: Vec<f64> = a.iter().map(|r| r[j]).collect();
            let cb: Vec<f64> = b.iter().map(|r| r[j]).collect();
            compare_marginal(&ca, &cb, bins)
        })
        .collect()
}
