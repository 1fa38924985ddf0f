//! Lognormal maximum-likelihood fitting and log-normality testing.
//!
//! The density fitted is
//! `f(r) = exp(-(ln r - μ)² / 2σ²) / (σ r √(2π))`, whose ML estimates are
//! the mean and the divisor-n variance of `ln r`. Zeros lie outside the
//! support and are handled by a [`ZeroPolicy`] before taking logs.

mod shapiro;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use shapiro::{shapiro_wilk, SwStatistic, MAX_N as SW_MAX_N, MIN_N as SW_MIN_N};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no positive values left after applying the zero policy")]
    Degenerate,
    #[error("need at least 2 positive values, got {0}")]
    TooFew(usize),
    #[error("all retained log values are identical")]
    ZeroVariance,
    #[error("sample size {0} outside the supported range 3..=5000")]
    UnsupportedSize(usize),
    #[error("sample contains non-finite values")]
    NonFinite,
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("hypothesis count must be at least 1")]
    HypothesisCount,
}

/// How zero counts are treated before log transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroPolicy {
    /// Drop values ≤ 0.
    #[default]
    Exclude,
    /// Use `r + 1` for every value.
    ShiftOne,
}

impl ZeroPolicy {
    /// Values entering the fit and the number dropped.
    pub fn apply(self, values: &[f64]) -> (Vec<f64>, usize) {
        match self {
            ZeroPolicy::Exclude => {
                let kept: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
                let dropped = values.len() - kept.len();
                (kept, dropped)
            }
            ZeroPolicy::ShiftOne => (values.iter().map(|v| v + 1.0).collect(), 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalFit {
    pub mu: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub n_used: usize,
    pub n_dropped: usize,
}

impl LognormalFit {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Observed-information standard error of μ̂: σ̂/√n.
    pub fn se_mu(&self) -> f64 {
        (self.sigma2 / self.n_used as f64).sqrt()
    }

    /// Observed-information standard error of σ̂²: σ̂²·√(2/n).
    pub fn se_sigma2(&self) -> f64 {
        self.sigma2 * (2.0 / self.n_used as f64).sqrt()
    }

    /// Mean of the fitted distribution, exp(μ + σ²/2).
    pub fn mean(&self) -> f64 {
        (self.mu + self.sigma2 / 2.0).exp()
    }

    /// Fraction of the fitted distribution at or above `x`.
    pub fn ccdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        let z = (x.ln() - self.mu) / self.sigma();
        statrs::distribution::ContinuousCDF::sf(
            &statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal"),
            z,
        )
    }

    /// The same fit expressed on values divided by `scale`: μ shifts by
    /// −ln scale and the Jacobian moves the log-likelihood by n·ln scale.
    pub fn rescaled(&self, scale: f64) -> LognormalFit {
        let ln_s = scale.ln();
        LognormalFit {
            mu: self.mu - ln_s,
            loglik: self.loglik + self.n_used as f64 * ln_s,
            ..*self
        }
    }
}

/// Log-likelihood of positive `values` under lognormal(μ, σ²).
pub fn lognormal_loglik(values: &[f64], mu: f64, sigma2: f64) -> f64 {
    let sigma = sigma2.sqrt();
    let norm = (2.0 * PI).sqrt();
    values
        .iter()
        .map(|&r| {
            let d = r.ln() - mu;
            -(r * sigma * norm).ln() - d * d / (2.0 * sigma2)
        })
        .sum()
}

pub fn fit_lognormal(reads: &[u64], policy: ZeroPolicy) -> Result<LognormalFit, FitError> {
    let values: Vec<f64> = reads.iter().map(|&r| r as f64).collect();
    fit_lognormal_values(&values, policy)
}

/// ML fit on real-valued data, e.g. rescaled counts.
pub fn fit_lognormal_values(values: &[f64], policy: ZeroPolicy) -> Result<LognormalFit, FitError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let (kept, n_dropped) = policy.apply(values);
    if kept.is_empty() {
        return Err(FitError::Degenerate);
    }
    if kept.len() < 2 {
        return Err(FitError::TooFew(kept.len()));
    }
    let logs: Vec<f64> = kept.iter().map(|v| v.ln()).collect();
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    let sigma2 = logs.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / n;
    if sigma2 <= 0.0 || logs.iter().all(|&l| l == logs[0]) {
        return Err(FitError::ZeroVariance);
    }
    Ok(LognormalFit {
        mu,
        sigma2,
        loglik: lognormal_loglik(&kept, mu, sigma2),
        n_used: kept.len(),
        n_dropped,
    })
}

/// Outcome of a log-normality test against a Bonferroni-corrected level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwTestResult {
    pub w: f64,
    pub p: f64,
    pub n: usize,
    pub alpha: f64,
    pub m: usize,
    pub reject: bool,
}

impl SwTestResult {
    pub fn threshold(&self) -> f64 {
        self.alpha / self.m as f64
    }
}

/// `p < alpha / m`.
pub fn bonferroni_reject(p: f64, alpha: f64, m: usize) -> Result<bool, FitError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FitError::Alpha(alpha));
    }
    if m == 0 {
        return Err(FitError::HypothesisCount);
    }
    Ok(p < alpha / m as f64)
}

/// Shapiro–Wilk on the logs of the policy-retained counts.
pub fn test_lognormality(
    reads: &[u64],
    policy: ZeroPolicy,
    alpha: f64,
    m: usize,
) -> Result<SwTestResult, FitError> {
    let values: Vec<f64> = reads.iter().map(|&r| r as f64).collect();
    test_lognormality_values(&values, policy, alpha, m)
}

pub fn test_lognormality_values(
    values: &[f64],
    policy: ZeroPolicy,
    alpha: f64,
    m: usize,
) -> Result<SwTestResult, FitError> {
    // parameter errors first, so they are not masked by sample problems
    bonferroni_reject(1.0, alpha, m)?;
    let (kept, _) = policy.apply(values);
    let logs: Vec<f64> = kept.iter().map(|v| v.ln()).collect();
    let sw = shapiro_wilk(&logs)?;
    Ok(SwTestResult {
        w: sw.w,
        p: sw.p,
        n: sw.n,
        alpha,
        m,
        reject: bonferroni_reject(sw.p, alpha, m)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_sample_has_zero_variance() {
        assert_eq!(fit_lognormal(&[1, 1, 1, 1], ZeroPolicy::Exclude), Err(FitError::ZeroVariance));
    }

    #[test]
    fn all_zero_is_degenerate() {
        assert_eq!(fit_lognormal(&[0, 0, 0], ZeroPolicy::Exclude), Err(FitError::Degenerate));
        assert_eq!(fit_lognormal(&[0, 0, 5], ZeroPolicy::Exclude), Err(FitError::TooFew(1)));
    }

    #[test]
    fn symmetric_log_sample() {
        let e = std::f64::consts::E;
        let fit = fit_lognormal_values(&[1.0, e, e * e], ZeroPolicy::Exclude).unwrap();
        assert!((fit.mu - 1.0).abs() < 1e-12);
        assert!((fit.sigma2 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((fit.n_used, fit.n_dropped), (3, 0));
    }

    #[test]
    fn zero_policies() {
        let fit = fit_lognormal(&[0, 1, 3, 0, 7], ZeroPolicy::Exclude).unwrap();
        assert_eq!((fit.n_used, fit.n_dropped), (3, 2));
        let fit = fit_lognormal(&[0, 1, 3, 0, 7], ZeroPolicy::ShiftOne).unwrap();
        assert_eq!((fit.n_used, fit.n_dropped), (5, 0));
        let logs = [1f64, 2., 4., 1., 8.].map(f64::ln);
        let mu = logs.iter().sum::<f64>() / 5.0;
        assert!((fit.mu - mu).abs() < 1e-12);
    }

    #[test]
    fn loglik_closed_form_at_optimum() {
        let vals = [0.3, 1.2, 2.5, 0.9, 4.1, 0.05];
        let fit = fit_lognormal_values(&vals, ZeroPolicy::Exclude).unwrap();
        let n = vals.len() as f64;
        let sum_ln: f64 = vals.iter().map(|v| v.ln()).sum();
        let closed = -sum_ln - n / 2.0 * (2.0 * PI * fit.sigma2).ln() - n / 2.0;
        assert!((fit.loglik - closed).abs() < 1e-10);
    }

    #[test]
    fn rescaled_fit_matches_direct_fit() {
        let reads = [3u64, 8, 1, 0, 22, 5, 13];
        let direct = fit_lognormal(&reads, ZeroPolicy::Exclude).unwrap();
        let r0 = reads.iter().sum::<u64>() as f64 / reads.len() as f64;
        let scaled: Vec<f64> = reads.iter().map(|&r| r as f64 / r0).collect();
        let refit = fit_lognormal_values(&scaled, ZeroPolicy::Exclude).unwrap();
        let moved = direct.rescaled(r0);
        assert!((moved.mu - refit.mu).abs() < 1e-12);
        assert!((moved.sigma2 - refit.sigma2).abs() < 1e-12);
        assert!((moved.loglik - refit.loglik).abs() < 1e-9);
    }

    #[test]
    fn bonferroni_threshold_arithmetic() {
        assert!(!bonferroni_reject(0.001, 0.05, 240).unwrap());
        assert!(bonferroni_reject(1e-5, 0.05, 240).unwrap());
        assert!(bonferroni_reject(0.03, 0.05, 1).unwrap());
        assert!((0.05f64 / 240.0 - 2.083e-4).abs() < 1e-6);
        assert_eq!(bonferroni_reject(0.01, 1.0, 1), Err(FitError::Alpha(1.0)));
        assert_eq!(bonferroni_reject(0.01, 0.0, 1), Err(FitError::Alpha(0.0)));
        assert_eq!(bonferroni_reject(0.01, 0.05, 0), Err(FitError::HypothesisCount));
    }

    #[test]
    fn alpha_checked_before_sample() {
        assert_eq!(test_lognormality(&[1, 1], ZeroPolicy::Exclude, 2.0, 1), Err(FitError::Alpha(2.0)));
    }

    #[test]
    fn se_reconstruction() {
        let fit = LognormalFit { mu: 0.0, sigma2: 1.0, loglik: 0.0, n_used: 200, n_dropped: 0 };
        assert!((fit.se_mu() - 1.0 / 200f64.sqrt()).abs() < 1e-15);
        assert!((fit.se_sigma2() - 0.1).abs() < 1e-15);
    }

    fn positive_sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..500.0, 2..60)
            .prop_filter("needs spread", |v| v.iter().any(|&x| (x - v[0]).abs() > 1e-6))
    }

    proptest! {
        #[test]
        fn mle_equals_log_moments(vals in positive_sample()) {
            let fit = fit_lognormal_values(&vals, ZeroPolicy::Exclude).unwrap();
            let logs: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
            let n = logs.len() as f64;
            let mean = logs.iter().sum::<f64>() / n;
            let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
            prop_assert!((fit.mu - mean).abs() < 1e-12);
            prop_assert!((fit.sigma2 - var).abs() < 1e-12 * var.max(1.0));
        }

        #[test]
        fn scale_equivariance(vals in positive_sample(), c in 1u32..1000) {
            let a = fit_lognormal_values(&vals, ZeroPolicy::Exclude).unwrap();
            let scaled: Vec<f64> = vals.iter().map(|v| v * c as f64).collect();
            let b = fit_lognormal_values(&scaled, ZeroPolicy::Exclude).unwrap();
            prop_assert!((b.mu - a.mu - (c as f64).ln()).abs() < 1e-10);
            prop_assert!((b.sigma2 - a.sigma2).abs() < 1e-10);
        }

        #[test]
        fn loglik_is_local_maximum(vals in positive_sample()) {
            let fit = fit_lognormal_values(&vals, ZeroPolicy::Exclude).unwrap();
            let d = 1e-3;
            for (mu, s2) in [
                (fit.mu + d, fit.sigma2),
                (fit.mu - d, fit.sigma2),
                (fit.mu, fit.sigma2 * (1.0 + d)),
                (fit.mu, fit.sigma2 * (1.0 - d)),
                (fit.mu + d, fit.sigma2 * (1.0 + d)),
            ] {
                prop_assert!(fit.loglik >= lognormal_loglik(&vals, mu, s2));
            }
        }

        #[test]
        fn bonferroni_monotone(p in 0.0f64..1.0, m in 1usize..500, extra in 0usize..500) {
            let loose = bonferroni_reject(p, 0.05, m).unwrap();
            let strict = bonferroni_reject(p, 0.05, m + extra).unwrap();
            prop_assert!(!strict || loose);
        }
    }
}
