//! Mean-rescaling within strata, pooling across strata, and empirical CCDFs.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Group, GroupKey, GroupStats, Metric};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RescaleError {
    #[error("group {0} is empty")]
    EmptyGroup(GroupKey),
    #[error("group {0} has no reads at all, so its mean is zero")]
    AllUnread(GroupKey),
    #[error("nothing to collapse")]
    NoSamples,
    #[error("collapse mixes years {0} and {1}")]
    MixedYears(i32, i32),
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains non-finite values")]
    NonFinite,
    #[error("sample contains negative values")]
    Negative,
}

/// Counts of one stratum divided by the stratum's own mean, R₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledSample {
    pub key: GroupKey,
    pub values: Vec<f64>,
    pub r0: f64,
}

impl RescaledSample {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn rescale_group(group: &Group) -> Result<RescaledSample, RescaleError> {
    rescale_group_metric(group, Metric::Reads)
}

/// Rescales the `metric` values present in the group. Zeros stay in R₀.
pub fn rescale_group_metric(group: &Group, metric: Metric) -> Result<RescaledSample, RescaleError> {
    let counts = group.values(metric);
    rescale_counts(group.key.clone(), &counts)
}

pub fn rescale_counts(key: GroupKey, counts: &[u64]) -> Result<RescaledSample, RescaleError> {
    let stats = GroupStats::from_counts(counts).map_err(|_| RescaleError::EmptyGroup(key.clone()))?;
    if stats.r_mean <= 0.0 {
        return Err(RescaleError::AllUnread(key));
    }
    let r0 = stats.r_mean;
    Ok(RescaledSample {
        key,
        values: counts.iter().map(|&c| c as f64 / r0).collect(),
        r0,
    })
}

/// Real-valued variant of [`rescale_counts`], for continuous samples.
pub fn rescale_values(key: GroupKey, values: &[f64]) -> Result<RescaledSample, RescaleError> {
    if values.is_empty() {
        return Err(RescaleError::EmptyGroup(key));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RescaleError::NonFinite);
    }
    if values.iter().any(|&v| v < 0.0) {
        return Err(RescaleError::Negative);
    }
    let r0 = values.iter().sum::<f64>() / values.len() as f64;
    if r0 <= 0.0 {
        return Err(RescaleError::AllUnread(key));
    }
    Ok(RescaledSample {
        key,
        values: values.iter().map(|v| v / r0).collect(),
        r0,
    })
}

/// Pools the rescaled strata of one year, concatenated in [`GroupKey`] order.
pub fn collapse(samples: &[RescaledSample]) -> Result<Vec<f64>, RescaleError> {
    let first = samples.first().ok_or(RescaleError::NoSamples)?;
    if let Some(other) = samples.iter().find(|s| s.key.year != first.key.year) {
        return Err(RescaleError::MixedYears(first.key.year, other.key.year));
    }
    let mut ordered: Vec<&RescaledSample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(ordered.iter().flat_map(|s| s.values.iter().copied()).collect())
}

/// Empirical complementary CDF: `p` is the fraction of the sample ≥ `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfCurve {
    pub points: Vec<(f64, f64)>,
}

pub fn ccdf(values: &[f64]) -> Result<CcdfCurve, RescaleError> {
    if values.is_empty() {
        return Err(RescaleError::EmptySample);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RescaleError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut points = Vec::new();
    let mut i = 0;
    while i < n {
        let x = sorted[i];
        points.push((x, (n - i) as f64 / n as f64));
        while i < n && sorted[i] == x {
            i += 1;
        }
    }
    Ok(CcdfCurve { points })
}

impl CcdfCurve {
    /// Fraction of the sample at or above `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.points.partition_point(|&(px, _)| px < x);
        self.points.get(idx).map_or(0.0, |&(_, p)| p)
    }

    /// Largest vertical gap between two curves over `x ≤ upto`.
    ///
    /// Both curves are left-continuous steps, so checking every breakpoint
    /// up to the bound plus the bound itself covers the supremum.
    pub fn kolmogorov_distance(&self, other: &CcdfCurve, upto: f64) -> f64 {
        self.points
            .iter()
            .chain(other.points.iter())
            .map(|&(x, _)| x)
            .filter(|&x| x <= upto)
            .chain(std::iter::once(upto))
            .map(|x| (self.eval(x) - other.eval(x)).abs())
            .fold(0.0, f64::max)
    }

    /// Two tab-separated columns, `x` then `p`, no header.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for &(x, p) in &self.points {
            writeln!(w, "{x}\t{p}")?;
        }
        Ok(())
    }
}
