//! Shares of the global top-z% publications per field, with the ±σ_z band.
//!
//! For `N_c` fields of sizes `N_i`, a field's share of the global top z%
//! is expected to fall within `z ± σ_z`, where
//! `σ_z = sqrt( z(100 − z) / N_c · Σ 1/N_i )`.
//!
//! Rescaled values `r / R₀` are ranked as exact rationals `r·N / Σr`, so
//! scaling every count of a field by a constant cannot perturb the order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GroupKey, Metric, PublicationRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopZError {
    #[error("z must lie strictly between 0 and 100, got {0}")]
    ZOutOfRange(f64),
    #[error("no field sizes given")]
    NoSizes,
    #[error("field sizes must be at least 1")]
    ZeroSize,
    #[error("no records to rank")]
    NoRecords,
    #[error("top {z}% of {n} records selects nothing")]
    EmptySelection { z: f64, n: usize },
    #[error("records span several years ({0} and {1})")]
    MixedYears(i32, i32),
    #[error("at least 2 fields are needed, got {0}")]
    TooFewFields(usize),
    #[error("field {0} has no reads at all and cannot be rescaled")]
    AllUnread(GroupKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Rescaled,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Rescaled => "rescaled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// Exactly ⌊z·N/100⌋ records, ties broken by ascending id.
    #[default]
    Rank,
    /// Everything valued at least as high as the ⌊z·N/100⌋-th record.
    Threshold,
}

fn check_z(z: f64) -> Result<(), TopZError> {
    if z > 0.0 && z < 100.0 {
        Ok(())
    } else {
        Err(TopZError::ZOutOfRange(z))
    }
}

pub fn sigma_z(z: f64, sizes: &[usize]) -> Result<f64, TopZError> {
    check_z(z)?;
    if sizes.is_empty() {
        return Err(TopZError::NoSizes);
    }
    if sizes.contains(&0) {
        return Err(TopZError::ZeroSize);
    }
    let n_c = sizes.len() as f64;
    let inv_sum: f64 = sizes.iter().map(|&n| 1.0 / n as f64).sum();
    Ok((z * (100.0 - z) / n_c * inv_sum).sqrt())
}

/// Number of records in the global top z% of `n`.
pub fn selection_size(z: f64, n: usize) -> usize {
    (z * n as f64 / 100.0).floor() as usize
}

/// Ranking key: a raw count, or a rescaled count `num / den`.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn cmp(&self, other: &Score) -> Ordering {
        match (
            self.num.checked_mul(other.den),
            other.num.checked_mul(self.den),
        ) {
            (Some(a), Some(b)) => a.cmp(&b),
            _ => (self.num as f64 / self.den as f64).total_cmp(&(other.num as f64 / other.den as f64)),
        }
    }

    fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

struct Ranked<'a> {
    record: &'a PublicationRecord,
    field: String,
    score: Score,
}

fn single_year(records: &[PublicationRecord]) -> Result<i32, TopZError> {
    let first = records.first().ok_or(TopZError::NoRecords)?;
    match records.iter().find(|r| r.year != first.year) {
        Some(other) => Err(TopZError::MixedYears(first.year, other.year)),
        None => Ok(first.year),
    }
}

fn rank<'a>(
    records: &'a [PublicationRecord],
    metric: Metric,
    variant: Variant,
) -> Result<Vec<Ranked<'a>>, TopZError> {
    single_year(records)?;
    // per-field (count, total) for the rescaling denominators
    let mut totals: BTreeMap<String, (u128, u128)> = BTreeMap::new();
    for r in records {
        if let Some(v) = metric.value(r) {
            let e = totals.entry(r.field.trim().to_string()).or_default();
            e.0 += 1;
            e.1 += v as u128;
        }
    }
    if variant == Variant::Rescaled {
        if let Some((field, _)) = totals.iter().find(|(_, &(_, sum))| sum == 0) {
            return Err(TopZError::AllUnread(GroupKey::new(field, records[0].year)));
        }
    }
    let mut ranked: Vec<Ranked> = records
        .iter()
        .filter_map(|r| {
            let v = metric.value(r)? as u128;
            let field = r.field.trim().to_string();
            let score = match variant {
                Variant::Original => Score { num: v, den: 1 },
                Variant::Rescaled => {
                    let (n, sum) = totals[&field];
                    Score { num: v * n, den: sum }
                }
            };
            Some(Ranked { record: r, field, score })
        })
        .collect();
    if ranked.is_empty() {
        return Err(TopZError::NoRecords);
    }
    ranked.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.record.id.cmp(&b.record.id)));
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub ids: BTreeSet<String>,
    /// ⌊z·N/100⌋; equals `ids.len()` under [`TieRule::Rank`].
    pub target: usize,
    /// Value of the last record inside the cut.
    pub cut_value: f64,
    pub n: usize,
}

pub fn top_membership(
    records: &[PublicationRecord],
    metric: Metric,
    variant: Variant,
    z: f64,
    tie: TieRule,
) -> Result<Selection, TopZError> {
    check_z(z)?;
    let ranked = rank(records, metric, variant)?;
    select(&ranked, z, tie).map(|(sel, _)| sel)
}

fn select(ranked: &[Ranked], z: f64, tie: TieRule) -> Result<(Selection, usize), TopZError> {
    let n = ranked.len();
    let target = selection_size(z, n);
    if target == 0 {
        return Err(TopZError::EmptySelection { z, n });
    }
    let cut = ranked[target - 1].score;
    let count = match tie {
        TieRule::Rank => target,
        TieRule::Threshold => {
            target
                + ranked[target..]
                    .iter()
                    .take_while(|r| r.score.cmp(&cut) == Ordering::Equal)
                    .count()
        }
    };
    let ids = ranked[..count].iter().map(|r| r.record.id.clone()).collect();
    Ok((
        Selection {
            ids,
            target,
            cut_value: cut.value(),
            n,
        },
        count,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldShare {
    pub field: String,
    pub n: usize,
    pub selected: usize,
    /// Percent of the field's records inside the global top z%.
    pub share: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopZReport {
    pub year: i32,
    pub z: f64,
    pub variant: Variant,
    pub tie: TieRule,
    pub sigma_z: f64,
    pub n_c: usize,
    pub selected: usize,
    pub within_tolerance: usize,
    pub fields: Vec<FieldShare>,
}

impl TopZReport {
    pub fn share(&self, field: &str) -> Option<f64> {
        self.fields.iter().find(|f| f.field == field).map(|f| f.share)
    }
}

pub fn top_share_report(
    records: &[PublicationRecord],
    metric: Metric,
    z: f64,
    variant: Variant,
    tie: TieRule,
) -> Result<TopZReport, TopZError> {
    check_z(z)?;
    let ranked = rank(records, metric, variant)?;
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &ranked {
        *sizes.entry(r.field.as_str()).or_default() += 1;
    }
    if sizes.len() < 2 {
        return Err(TopZError::TooFewFields(sizes.len()));
    }
    let (_, count) = select(&ranked, z, tie)?;
    let mut hits: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &ranked[..count] {
        *hits.entry(r.field.as_str()).or_default() += 1;
    }

    let size_list: Vec<usize> = sizes.values().copied().collect();
    let sigma = sigma_z(z, &size_list)?;
    let fields: Vec<FieldShare> = sizes
        .iter()
        .map(|(&field, &n)| {
            let selected = hits.get(field).copied().unwrap_or(0);
            let share = 100.0 * selected as f64 / n as f64;
            FieldShare {
                field: field.to_string(),
                n,
                selected,
                share,
                within: (share - z).abs() <= sigma,
            }
        })
        .collect();
    Ok(TopZReport {
        year: records[0].year,
        z,
        variant,
        tie,
        sigma_z: sigma,
        n_c: fields.len(),
        selected: count,
        within_tolerance: fields.iter().filter(|f| f.within).count(),
        fields,
    })
}
