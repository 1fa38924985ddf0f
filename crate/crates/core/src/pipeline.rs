//! The analysis steps run by the command-line tool, as row-producing
//! functions over an in-memory corpus.
//!
//! Per-stratum failures become rows carrying an `error` message; only an
//! unusable corpus (empty, duplicate ids) fails a whole step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{group_by_field_year, CorpusError, Group, GroupKey, GroupStats, Metric, PublicationRecord};
use crate::css::{self, Truncation};
use crate::distfit::{self, LognormalFit, ZeroPolicy, SW_MAX_N, SW_MIN_N};
use crate::rescale::{self, ccdf, CcdfCurve, RescaledSample};
use crate::topz::{self, TieRule, TopZReport, Variant};

pub const DEFAULT_Z: [f64; 3] = [5.0, 10.0, 20.0];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("no records for the requested years")]
    NoYears,
    #[error("z must lie strictly between 0 and 100, got {0}")]
    ZOutOfRange(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("hypothesis count must be at least 1")]
    HypothesisCount,
    #[error("CSS depth must be at least 1")]
    CssDepth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub metric: Metric,
    pub zero_policy: ZeroPolicy,
    pub alpha: f64,
    /// Bonferroni family size; defaults to the number of tests actually run.
    pub m: Option<usize>,
    pub z_values: Vec<f64>,
    pub k: usize,
    /// Restrict to these years; all years when empty.
    pub years: Vec<i32>,
    pub tie: TieRule,
    pub truncation: Truncation,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Reads,
            zero_policy: ZeroPolicy::Exclude,
            alpha: 0.05,
            m: None,
            z_values: DEFAULT_Z.to_vec(),
            k: 3,
            years: Vec::new(),
            tie: TieRule::Rank,
            truncation: Truncation::AtLeast,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PipelineError::Alpha(self.alpha));
        }
        if self.m == Some(0) {
            return Err(PipelineError::HypothesisCount);
        }
        if let Some(&z) = self.z_values.iter().find(|&&z| !(z > 0.0 && z < 100.0)) {
            return Err(PipelineError::ZOutOfRange(z));
        }
        if self.k == 0 {
            return Err(PipelineError::CssDepth);
        }
        Ok(())
    }

    fn wants(&self, year: i32) -> bool {
        self.years.is_empty() || self.years.contains(&year)
    }
}

/// Strata of the selected years, in key order.
pub fn strata(
    records: &[PublicationRecord],
    cfg: &AnalysisConfig,
) -> Result<BTreeMap<GroupKey, Group>, PipelineError> {
    cfg.validate()?;
    let mut groups = group_by_field_year(records)?;
    groups.retain(|k, _| cfg.wants(k.year));
    if groups.is_empty() {
        return Err(PipelineError::NoYears);
    }
    Ok(groups)
}

fn by_year(groups: &BTreeMap<GroupKey, Group>) -> BTreeMap<i32, Vec<&Group>> {
    let mut years: BTreeMap<i32, Vec<&Group>> = BTreeMap::new();
    for g in groups.values() {
        years.entry(g.key.year).or_default().push(g);
    }
    years
}

fn join_errors(errors: Vec<String>) -> Option<String> {
    (!errors.is_empty()).then(|| errors.join("; "))
}

/// One stratum: summary statistics, log-normality test and lognormal fits
/// on both the raw and the rescaled counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub field: String,
    pub year: i32,
    pub obs: usize,
    pub r0: Option<f64>,
    pub r_max: Option<u64>,
    pub zero_share: Option<f64>,
    pub sw_w: Option<f64>,
    pub sw_p: Option<f64>,
    pub reject: Option<bool>,
    pub mu: Option<f64>,
    pub se_mu: Option<f64>,
    pub sigma2: Option<f64>,
    pub se_sigma2: Option<f64>,
    pub loglik: Option<f64>,
    pub n_used: Option<usize>,
    pub mu_rescaled: Option<f64>,
    pub loglik_rescaled: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTable {
    pub alpha: f64,
    pub m: usize,
    pub rows: Vec<FitRow>,
}

pub fn fit_table(records: &[PublicationRecord], cfg: &AnalysisConfig) -> Result<FitTable, PipelineError> {
    let groups = strata(records, cfg)?;

    // first pass: W and p, so that m can default to the executed family size
    let tests: Vec<Result<distfit::SwStatistic, String>> = groups
        .values()
        .map(|g| {
            let values: Vec<f64> = g.values(cfg.metric).iter().map(|&v| v as f64).collect();
            let (kept, _) = cfg.zero_policy.apply(&values);
            let logs: Vec<f64> = kept.iter().map(|v| v.ln()).collect();
            distfit::shapiro_wilk(&logs).map_err(|e| format!("sw: {e}"))
        })
        .collect();
    let executed = tests.iter().filter(|t| t.is_ok()).count();
    let m = cfg.m.unwrap_or(executed.max(1));

    let rows = groups
        .values()
        .zip(tests)
        .map(|(g, test)| {
            let counts = g.values(cfg.metric);
            let mut errors = Vec::new();
            let stats = GroupStats::from_counts(&counts)
                .map_err(|e| errors.push(format!("stats: {e}")))
                .ok();
            let (sw_w, sw_p, reject) = match test {
                Ok(sw) => (
                    Some(sw.w),
                    Some(sw.p),
                    distfit::bonferroni_reject(sw.p, cfg.alpha, m).ok(),
                ),
                Err(e) => {
                    errors.push(e);
                    (None, None, None)
                }
            };
            let fit = distfit::fit_lognormal(&counts, cfg.zero_policy)
                .map_err(|e| errors.push(format!("fit: {e}")))
                .ok();
            let rescaled_fit = rescale::rescale_counts(g.key.clone(), &counts)
                .ok()
                .and_then(|s| distfit::fit_lognormal_values(&s.values, cfg.zero_policy).ok());
            FitRow {
                field: g.key.field.clone(),
                year: g.key.year,
                obs: counts.len(),
                r0: stats.map(|s| s.r_mean),
                r_max: stats.map(|s| s.r_max),
                zero_share: stats.map(|s| s.zero_share),
                sw_w,
                sw_p,
                reject,
                mu: fit.map(|f| f.mu),
                se_mu: fit.map(|f| f.se_mu()),
                sigma2: fit.map(|f| f.sigma2),
                se_sigma2: fit.map(|f| f.se_sigma2()),
                loglik: fit.map(|f| f.loglik),
                n_used: fit.map(|f| f.n_used),
                mu_rescaled: rescaled_fit.map(|f| f.mu),
                loglik_rescaled: rescaled_fit.map(|f| f.loglik),
                error: join_errors(errors),
            }
        })
        .collect();
    Ok(FitTable { alpha: cfg.alpha, m, rows })
}

/// Lognormal fit of one year's pooled rescaled values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub year: i32,
    pub strata: usize,
    pub obs: usize,
    pub mu: Option<f64>,
    pub se_mu: Option<f64>,
    pub sigma2: Option<f64>,
    pub se_sigma2: Option<f64>,
    pub loglik: Option<f64>,
    pub n_used: Option<usize>,
    pub sw_w: Option<f64>,
    pub sw_p: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumCurves {
    pub key: GroupKey,
    pub raw: CcdfCurve,
    pub rescaled: CcdfCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearCurves {
    pub year: i32,
    pub strata: Vec<StratumCurves>,
    pub merged: Option<CcdfCurve>,
    /// The pooled lognormal fit evaluated at the merged curve's points.
    pub model: Option<CcdfCurve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseOutput {
    pub rows: Vec<CollapseRow>,
    pub curves: Vec<YearCurves>,
    /// Strata left out of the pool, with the reason.
    pub skipped: Vec<(GroupKey, String)>,
}

pub fn collapse_table(
    records: &[PublicationRecord],
    cfg: &AnalysisConfig,
) -> Result<CollapseOutput, PipelineError> {
    let groups = strata(records, cfg)?;
    let mut out = CollapseOutput {
        rows: Vec::new(),
        curves: Vec::new(),
        skipped: Vec::new(),
    };
    for (year, members) in by_year(&groups) {
        let mut samples: Vec<RescaledSample> = Vec::new();
        let mut strata_curves = Vec::new();
        for g in members {
            match rescale::rescale_group_metric(g, cfg.metric) {
                Ok(s) => {
                    let raw: Vec<f64> = g.values(cfg.metric).iter().map(|&v| v as f64).collect();
                    strata_curves.push(StratumCurves {
                        key: g.key.clone(),
                        raw: ccdf(&raw).expect("non-empty stratum"),
                        rescaled: ccdf(&s.values).expect("non-empty stratum"),
                    });
                    samples.push(s);
                }
                Err(e) => out.skipped.push((g.key.clone(), e.to_string())),
            }
        }
        let mut row = CollapseRow {
            year,
            strata: samples.len(),
            obs: 0,
            mu: None,
            se_mu: None,
            sigma2: None,
            se_sigma2: None,
            loglik: None,
            n_used: None,
            sw_w: None,
            sw_p: None,
            error: None,
        };
        let mut curves = YearCurves {
            year,
            strata: strata_curves,
            merged: None,
            model: None,
        };
        match rescale::collapse(&samples) {
            Ok(merged) => {
                row.obs = merged.len();
                let mut errors = Vec::new();
                match distfit::fit_lognormal_values(&merged, cfg.zero_policy) {
                    Ok(fit) => {
                        fill_fit(&mut row, &fit);
                        curves.model = Some(model_curve(&fit, &merged));
                    }
                    Err(e) => errors.push(format!("fit: {e}")),
                }
                let (kept, _) = cfg.zero_policy.apply(&merged);
                if (SW_MIN_N..=SW_MAX_N).contains(&kept.len()) {
                    let logs: Vec<f64> = kept.iter().map(|v| v.ln()).collect();
                    if let Ok(sw) = distfit::shapiro_wilk(&logs) {
                        row.sw_w = Some(sw.w);
                        row.sw_p = Some(sw.p);
                    }
                }
                curves.merged = ccdf(&merged).ok();
                row.error = join_errors(errors);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        out.rows.push(row);
        out.curves.push(curves);
    }
    Ok(out)
}

fn fill_fit(row: &mut CollapseRow, fit: &LognormalFit) {
    row.mu = Some(fit.mu);
    row.se_mu = Some(fit.se_mu());
    row.sigma2 = Some(fit.sigma2);
    row.se_sigma2 = Some(fit.se_sigma2());
    row.loglik = Some(fit.loglik);
    row.n_used = Some(fit.n_used);
}

fn model_curve(fit: &LognormalFit, merged: &[f64]) -> CcdfCurve {
    let mut xs: Vec<f64> = merged.iter().copied().filter(|&v| v > 0.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    CcdfCurve {
        points: xs.into_iter().map(|x| (x, fit.ccdf(x))).collect(),
    }
}

/// CSS scores, counts and shares for one population (a stratum, or a
/// whole year when `field` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CssRow {
    pub field: Option<String>,
    pub year: i32,
    pub n: usize,
    pub betas: Vec<f64>,
    pub counts: Vec<usize>,
    /// Percent.
    pub shares: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CssTables {
    pub k: usize,
    pub overall: Vec<CssRow>,
    pub strata: Vec<CssRow>,
}

fn css_row(field: Option<String>, year: i32, counts: &[u64], cfg: &AnalysisConfig) -> CssRow {
    match css::css_counts(counts, cfg.k, cfg.truncation) {
        Ok(r) => CssRow {
            field,
            year,
            n: counts.len(),
            shares: r.shares_percent(),
            error: (r.betas.len() < cfg.k)
                .then(|| format!("degenerate: stopped after {} characteristic score(s)", r.betas.len())),
            betas: r.betas,
            counts: r.class_counts,
        },
        Err(e) => CssRow {
            field,
            year,
            n: counts.len(),
            betas: Vec::new(),
            counts: Vec::new(),
            shares: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

pub fn css_tables(records: &[PublicationRecord], cfg: &AnalysisConfig) -> Result<CssTables, PipelineError> {
    let groups = strata(records, cfg)?;
    let strata_rows = groups
        .values()
        .map(|g| css_row(Some(g.key.field.clone()), g.key.year, &g.values(cfg.metric), cfg))
        .collect();
    let overall = by_year(&groups)
        .into_iter()
        .map(|(year, members)| {
            let pooled: Vec<u64> = members.iter().flat_map(|g| g.values(cfg.metric)).collect();
            css_row(None, year, &pooled, cfg)
        })
        .collect();
    Ok(CssTables {
        k: cfg.k,
        overall,
        strata: strata_rows,
    })
}

/// Within-tolerance counts for one (year, z), before and after rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopZSummaryRow {
    pub year: i32,
    pub z: f64,
    pub n_c: usize,
    pub sigma_z: Option<f64>,
    pub within_original: Option<usize>,
    pub within_rescaled: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopZOutput {
    pub summary: Vec<TopZSummaryRow>,
    pub reports: Vec<TopZReport>,
}

pub fn topz_tables(records: &[PublicationRecord], cfg: &AnalysisConfig) -> Result<TopZOutput, PipelineError> {
    let groups = strata(records, cfg)?;
    let mut out = TopZOutput {
        summary: Vec::new(),
        reports: Vec::new(),
    };
    for (year, members) in by_year(&groups) {
        let year_records: Vec<PublicationRecord> =
            members.iter().flat_map(|g| g.records.iter().cloned()).collect();
        for &z in &cfg.z_values {
            let mut row = TopZSummaryRow {
                year,
                z,
                n_c: members.len(),
                sigma_z: None,
                within_original: None,
                within_rescaled: None,
                error: None,
            };
            let mut errors = Vec::new();
            for variant in [Variant::Original, Variant::Rescaled] {
                match topz::top_share_report(&year_records, cfg.metric, z, variant, cfg.tie) {
                    Ok(rep) => {
                        row.sigma_z = Some(rep.sigma_z);
                        row.n_c = rep.n_c;
                        match variant {
                            Variant::Original => row.within_original = Some(rep.within_tolerance),
                            Variant::Rescaled => row.within_rescaled = Some(rep.within_tolerance),
                        }
                        out.reports.push(rep);
                    }
                    Err(e) => errors.push(format!("{}: {e}", variant.as_str())),
                }
            }
            row.error = join_errors(errors);
            out.summary.push(row);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, field: &str, year: i32, reads: u64) -> PublicationRecord {
        PublicationRecord::new(id, field, year, reads)
    }

    fn small_corpus() -> Vec<PublicationRecord> {
        let mut out = Vec::new();
        for (f, base) in [("A", 3u64), ("B", 11)] {
            for i in 0..40u64 {
                out.push(rec(&format!("{f}{i}"), f, 2010, base + (i * i) % 37));
            }
        }
        out.push(rec("lonely", "C", 2010, 4));
        out
    }

    #[test]
    fn single_record_stratum_is_marked() {
        let t = fit_table(&small_corpus(), &AnalysisConfig::default()).unwrap();
        assert_eq!(t.rows.len(), 3);
        let c = &t.rows[2];
        assert_eq!((c.field.as_str(), c.obs), ("C", 1));
        assert!(c.error.is_some());
        assert!(c.mu.is_none() && c.sw_p.is_none());
        assert!(t.rows[0].error.is_none());
        // m defaults to the tests actually run
        assert_eq!(t.m, 2);
    }

    #[test]
    fn explicit_m_is_used() {
        let cfg = AnalysisConfig { m: Some(240), ..AnalysisConfig::default() };
        assert_eq!(fit_table(&small_corpus(), &cfg).unwrap().m, 240);
    }

    #[test]
    fn single_stratum_pool_equals_stratum_rescaled_fit() {
        let recs: Vec<_> = small_corpus().into_iter().filter(|r| r.field == "A").collect();
        let cfg = AnalysisConfig::default();
        let fit = fit_table(&recs, &cfg).unwrap();
        let pooled = collapse_table(&recs, &cfg).unwrap();
        assert_eq!(pooled.rows[0].obs, 40);
        assert_eq!(pooled.rows[0].mu, fit.rows[0].mu_rescaled);
        assert_eq!(pooled.rows[0].loglik, fit.rows[0].loglik_rescaled);
        assert_eq!(pooled.curves[0].merged.as_ref().unwrap().points[0].1, 1.0);
    }

    #[test]
    fn year_filter() {
        let mut recs = small_corpus();
        recs.push(rec("z", "A", 2011, 3));
        let cfg = AnalysisConfig { years: vec![2011], ..AnalysisConfig::default() };
        let t = css_tables(&recs, &cfg).unwrap();
        assert_eq!(t.overall.len(), 1);
        assert_eq!(t.overall[0].year, 2011);
        let cfg = AnalysisConfig { years: vec![1999], ..AnalysisConfig::default() };
        assert!(matches!(css_tables(&recs, &cfg), Err(PipelineError::NoYears)));
    }

    #[test]
    fn css_hand_example_through_pipeline() {
        let recs: Vec<_> = [1u64, 2, 3, 4, 10]
            .iter()
            .enumerate()
            .map(|(i, &r)| rec(&i.to_string(), "A", 2010, r))
            .collect();
        let t = css_tables(&recs, &AnalysisConfig::default()).unwrap();
        assert_eq!(t.strata.len(), 1);
        assert_eq!(t.strata[0].betas, vec![4.0, 7.0, 10.0]);
        assert_eq!(t.strata[0].shares, vec![60.0, 20.0, 0.0, 20.0]);
        assert_eq!(t.overall[0].counts, vec![3, 1, 0, 1]);
    }

    #[test]
    fn bad_config_rejected() {
        let recs = small_corpus();
        let cfg = AnalysisConfig { z_values: vec![100.0], ..AnalysisConfig::default() };
        assert!(matches!(topz_tables(&recs, &cfg), Err(PipelineError::ZOutOfRange(_))));
        let cfg = AnalysisConfig { alpha: 0.0, ..AnalysisConfig::default() };
        assert!(matches!(fit_table(&recs, &cfg), Err(PipelineError::Alpha(_))));
    }

    #[test]
    fn topz_summary_per_year_and_z() {
        let out = topz_tables(&small_corpus(), &AnalysisConfig::default()).unwrap();
        assert_eq!(out.summary.len(), 3);
        assert_eq!(out.reports.len(), 6);
        assert!(out.summary.iter().all(|r| r.n_c == 3 && r.error.is_none()));
    }

    #[test]
    fn unread_stratum_skipped_in_collapse() {
        let mut recs = small_corpus();
        recs.push(rec("u1", "D", 2010, 0));
        recs.push(rec("u2", "D", 2010, 0));
        let out = collapse_table(&recs, &AnalysisConfig::default()).unwrap();
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.rows[0].strata, 3);
        assert_eq!(out.rows[0].obs, 81);
    }
}
