//! Publication records and their (field, year) stratification.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One article with its readership count and, optionally, its citation count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicationRecord {
    pub id: String,
    pub field: String,
    pub year: i32,
    pub reads: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cites: Option<u64>,
}

impl PublicationRecord {
    pub fn new(id: impl Into<String>, field: impl Into<String>, year: i32, reads: u64) -> Self {
        Self {
            id: id.into(),
            field: field.into(),
            year,
            reads,
            cites: None,
        }
    }

    pub fn with_cites(mut self, cites: u64) -> Self {
        self.cites = Some(cites);
        self
    }

    pub fn key(&self) -> GroupKey {
        GroupKey::new(&self.field, self.year)
    }
}

/// Which count a pipeline stage operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Reads,
    Cites,
}

impl Metric {
    pub fn value(self, record: &PublicationRecord) -> Option<u64> {
        match self {
            Metric::Reads => Some(record.reads),
            Metric::Cites => record.cites,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Reads => f.write_str("reads"),
            Metric::Cites => f.write_str("cites"),
        }
    }
}

/// A subject-category/year stratum. Labels are compared verbatim after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub field: String,
    pub year: i32,
}

impl GroupKey {
    pub fn new(field: &str, year: i32) -> Self {
        Self {
            field: field.trim().to_string(),
            year,
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.field, self.year)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub key: GroupKey,
    pub records: Vec<PublicationRecord>,
}

impl Group {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Values of `metric` for the members that carry it, in member order.
    pub fn values(&self, metric: Metric) -> Vec<u64> {
        self.records.iter().filter_map(|r| metric.value(r)).collect()
    }

    pub fn reads(&self) -> Vec<u64> {
        self.values(Metric::Reads)
    }

    pub fn stats(&self) -> Result<GroupStats, CorpusError> {
        group_stats(self)
    }
}

/// Summary of one stratum: size, internal mean (R₀), maximum and share of zeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub r_mean: f64,
    pub r_max: u64,
    pub zero_share: f64,
}

impl GroupStats {
    pub fn from_counts(values: &[u64]) -> Result<Self, CorpusError> {
        if values.is_empty() {
            return Err(CorpusError::EmptyGroup);
        }
        let n = values.len();
        let sum: u128 = values.iter().map(|&v| v as u128).sum();
        let zeros = values.iter().filter(|&&v| v == 0).count();
        Ok(Self {
            n,
            r_mean: sum as f64 / n as f64,
            r_max: values.iter().copied().max().unwrap_or(0),
            zero_share: zeros as f64 / n as f64,
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty group")]
    EmptyGroup,
    #[error("duplicate ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
}

/// Partitions records into (field, year) strata, keyed in sorted order.
///
/// Records keep their input order inside each group.
pub fn group_by_field_year(
    records: &[PublicationRecord],
) -> Result<BTreeMap<GroupKey, Group>, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let dups = duplicate_ids(records);
    if !dups.is_empty() {
        return Err(CorpusError::DuplicateIds(dups));
    }

    let mut groups: BTreeMap<GroupKey, Group> = BTreeMap::new();
    for record in records {
        let key = record.key();
        groups
            .entry(key.clone())
            .or_insert_with(|| Group {
                key,
                records: Vec::new(),
            })
            .records
            .push(record.clone());
    }
    Ok(groups)
}

pub fn group_stats(group: &Group) -> Result<GroupStats, CorpusError> {
    GroupStats::from_counts(&group.reads())
}

/// Ids occurring more than once, each listed once in order of first repetition.
pub fn duplicate_ids(records: &[PublicationRecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    let mut dups = Vec::new();
    for r in records {
        if !seen.insert(r.id.as_str()) && reported.insert(r.id.as_str()) {
            dups.push(r.id.clone());
        }
    }
    dups
}

/// Distinct publication years present, ascending.
pub fn years(records: &[PublicationRecord]) -> Vec<i32> {
    let mut years: Vec<i32> = records.iter().map(|r| r.year).collect();
    years.sort_unstable();
    years.dedup();
    years
}
