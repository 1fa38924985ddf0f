//! Characteristic Scores and Scales.
//!
//! The first score is the sample mean; each further score is the mean of
//! the observations at or above the previous one. `k` scores split the
//! sample into `k + 1` classes:
//!
//! | class | interval        |
//! |-------|-----------------|
//! | I     | `[0, β₁)`       |
//! | II    | `[β₁, β₂)`      |
//! | III   | `[β₂, β₃)`      |
//! | IV    | `[β₃, ∞)`       |
//!
//! With [`Truncation::Above`] the truncation uses `>` and the intervals
//! become closed above instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CssError {
    #[error("empty sample")]
    EmptySample,
    #[error("at least one characteristic score is required")]
    ZeroDepth,
    #[error("characteristic scores must be strictly increasing")]
    NotIncreasing,
    #[error("sample contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    /// Keep values ≥ the current score.
    #[default]
    AtLeast,
    /// Keep values > the current score.
    Above,
}

impl Truncation {
    fn keeps(self, v: f64, score: f64) -> bool {
        match self {
            Truncation::AtLeast => v >= score,
            Truncation::Above => v > score,
        }
    }
}

/// Up to `k` scores; fewer when a truncated subsample is empty or its mean
/// fails to increase.
pub fn characteristic_scores(values: &[f64], k: usize, rule: Truncation) -> Result<Vec<f64>, CssError> {
    if values.is_empty() {
        return Err(CssError::EmptySample);
    }
    if k == 0 {
        return Err(CssError::ZeroDepth);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CssError::NonFinite);
    }
    let mut scores: Vec<f64> = Vec::with_capacity(k);
    let mut sub: Vec<f64> = values.to_vec();
    while scores.len() < k {
        let beta = sub.iter().sum::<f64>() / sub.len() as f64;
        if scores.last().is_some_and(|&prev| beta <= prev) {
            break;
        }
        scores.push(beta);
        sub.retain(|&v| rule.keeps(v, beta));
        if sub.is_empty() {
            break;
        }
    }
    Ok(scores)
}

pub fn characteristic_scores_counts(reads: &[u64], k: usize, rule: Truncation) -> Result<Vec<f64>, CssError> {
    let values: Vec<f64> = reads.iter().map(|&r| r as f64).collect();
    characteristic_scores(&values, k, rule)
}

/// Class bounds; `upper` is `None` for the open top class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassInterval {
    pub lower: f64,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CssResult {
    pub betas: Vec<f64>,
    pub rule: Truncation,
    pub class_counts: Vec<usize>,
    pub class_shares: Vec<f64>,
    pub thresholds: Vec<ClassInterval>,
    /// Class index (0 = I) of each input value, in input order.
    pub labels: Vec<usize>,
}

impl CssResult {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn shares_percent(&self) -> Vec<f64> {
        self.class_shares.iter().map(|s| 100.0 * s).collect()
    }
}

/// Roman numeral for class index `i` (0 → "I").
pub fn class_name(i: usize) -> String {
    const NAMES: [&str; 10] = ["I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X"];
    NAMES.get(i).map_or_else(|| format!("C{}", i + 1), |s| s.to_string())
}

pub fn classify(values: &[f64], betas: &[f64], rule: Truncation) -> Result<CssResult, CssError> {
    if betas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CssError::NotIncreasing);
    }
    if values.iter().chain(betas).any(|v| !v.is_finite()) {
        return Err(CssError::NonFinite);
    }
    let labels: Vec<usize> = values
        .iter()
        .map(|&v| betas.iter().take_while(|&&b| rule.keeps(v, b)).count())
        .collect();
    let mut class_counts = vec![0usize; betas.len() + 1];
    for &l in &labels {
        class_counts[l] += 1;
    }
    let n = values.len();
    let class_shares = class_counts
        .iter()
        .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect();
    let thresholds = (0..=betas.len())
        .map(|i| ClassInterval {
            lower: if i == 0 { 0.0 } else { betas[i - 1] },
            upper: betas.get(i).copied(),
        })
        .collect();
    Ok(CssResult {
        betas: betas.to_vec(),
        rule,
        class_counts,
        class_shares,
        thresholds,
        labels,
    })
}

/// Scores and classes in one pass.
pub fn css(values: &[f64], k: usize, rule: Truncation) -> Result<CssResult, CssError> {
    let betas = characteristic_scores(values, k, rule)?;
    classify(values, &betas, rule)
}

pub fn css_counts(reads: &[u64], k: usize, rule: Truncation) -> Result<CssResult, CssError> {
    let values: Vec<f64> = reads.iter().map(|&r| r as f64).collect();
    css(&values, k, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EX: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 10.0];

    #[test]
    fn hand_example() {
        let betas = characteristic_scores(&EX, 3, Truncation::AtLeast).unwrap();
        assert_eq!(betas, vec![4.0, 7.0, 10.0]);
        let r = classify(&EX, &betas, Truncation::AtLeast).unwrap();
        assert_eq!(r.class_counts, vec![3, 1, 0, 1]);
        assert_eq!(r.labels, vec![0, 0, 0, 1, 3]);
        assert_eq!(r.shares_percent(), vec![60.0, 20.0, 0.0, 20.0]);
    }

    #[test]
    fn constant_sample_stops_early() {
        let betas = characteristic_scores(&[5.0; 3], 3, Truncation::AtLeast).unwrap();
        assert_eq!(betas, vec![5.0]);
        let r = classify(&[5.0; 3], &betas, Truncation::AtLeast).unwrap();
        assert_eq!(r.class_counts, vec![0, 3]);
    }

    #[test]
    fn strict_rule_stops_on_empty_tail() {
        // nothing above 5 once the mean is 5
        assert_eq!(characteristic_scores(&[5.0; 3], 3, Truncation::Above).unwrap(), vec![5.0]);
        let betas = characteristic_scores(&EX, 3, Truncation::Above).unwrap();
        assert_eq!(betas, vec![4.0, 10.0]);
    }

    #[test]
    fn boundaries_are_half_open() {
        let reads = [0.0, 27.0, 28.0, 68.0, 69.0, 133.0, 134.0];
        let r = classify(&reads, &[28.0, 69.0, 134.0], Truncation::AtLeast).unwrap();
        assert_eq!(r.labels, vec![0, 0, 1, 1, 2, 2, 3]);
        assert_eq!(r.thresholds[0], ClassInterval { lower: 0.0, upper: Some(28.0) });
        assert_eq!(r.thresholds[3], ClassInterval { lower: 134.0, upper: None });
    }

    #[test]
    fn everything_in_first_class() {
        let r = classify(&[1.0, 2.0], &[5.0, 6.0, 7.0], Truncation::AtLeast).unwrap();
        assert_eq!(r.class_shares, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert_eq!(characteristic_scores(&[], 3, Truncation::AtLeast), Err(CssError::EmptySample));
        assert_eq!(characteristic_scores(&EX, 0, Truncation::AtLeast), Err(CssError::ZeroDepth));
        assert_eq!(classify(&EX, &[4.0, 4.0], Truncation::AtLeast), Err(CssError::NotIncreasing));
        assert_eq!(classify(&EX, &[7.0, 4.0], Truncation::AtLeast), Err(CssError::NotIncreasing));
    }

    #[test]
    fn class_names() {
        assert_eq!(class_name(0), "I");
        assert_eq!(class_name(3), "IV");
        assert_eq!(class_name(12), "C13");
    }

    proptest! {
        #[test]
        fn scores_increase_and_partition(reads in prop::collection::vec(0u64..200, 1..100), k in 1usize..6) {
            let r = css_counts(&reads, k, Truncation::AtLeast).unwrap();
            prop_assert!(r.betas.len() <= k && !r.betas.is_empty());
            prop_assert!(r.betas.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(r.class_counts.iter().sum::<usize>(), reads.len());
            prop_assert!((r.class_shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (v, &l) in reads.iter().zip(&r.labels) {
                let v = *v as f64;
                let iv = r.thresholds[l];
                prop_assert!(v >= iv.lower || l == 0);
                prop_assert!(iv.upper.is_none_or(|u| v < u));
            }
        }

        #[test]
        fn shares_scale_invariant(reads in prop::collection::vec(0u64..200, 1..100), c in 1u64..50) {
            let a = css_counts(&reads, 3, Truncation::AtLeast).unwrap();
            let scaled: Vec<u64> = reads.iter().map(|r| r * c).collect();
            let b = css_counts(&scaled, 3, Truncation::AtLeast).unwrap();
            prop_assert_eq!(&a.class_counts, &b.class_counts);
            for (x, y) in a.betas.iter().zip(&b.betas) {
                prop_assert!((x * c as f64 - y).abs() <= 1e-9 * y.max(1.0));
            }
        }
    }
}
