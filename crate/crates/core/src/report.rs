//! Rendering of pipeline results into output files.
//!
//! Every table is produced twice: a rounded TSV for reading and a
//! line-JSON mirror at full precision. Rendering is pure; callers decide
//! where the bytes go.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::css::class_name;
use crate::pipeline::{CollapseOutput, CssRow, CssTables, FitTable, TopZOutput};
use crate::rescale::CcdfCurve;
use crate::topz::TopZReport;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("fields {0:?} and {1:?} map to the same file name")]
    SlugCollision(String, String),
    #[error("field {0:?} has no usable characters for a file name")]
    EmptySlug(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl OutputFile {
    fn text(name: impl Into<String>, text: String) -> Self {
        Self {
            name: name.into(),
            bytes: text.into_bytes(),
        }
    }
}

/// Table format for console output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableFormat {
    #[default]
    Tsv,
    Jsonl,
}

/// Lowercase, with every run of non-alphanumeric characters turned into `_`.
pub fn slug(field: &str) -> String {
    let mut out = String::new();
    for c in field.trim().chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Slugs for a set of field names, refusing collisions.
pub fn slugs<'a>(fields: impl IntoIterator<Item = &'a str>) -> Result<BTreeMap<String, String>, ReportError> {
    let mut by_slug: BTreeMap<String, String> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for f in fields {
        if out.contains_key(f) {
            continue;
        }
        let s = slug(f);
        if s.is_empty() {
            return Err(ReportError::EmptySlug(f.to_string()));
        }
        if let Some(prev) = by_slug.get(&s) {
            return Err(ReportError::SlugCollision(prev.clone(), f.to_string()));
        }
        by_slug.insert(s.clone(), f.to_string());
        out.insert(f.to_string(), s);
    }
    Ok(out)
}

const NA: &str = "NA";

fn fixed(x: f64, digits: usize) -> String {
    let s = format!("{x:.digits$}");
    // keep "-0.000" out of the tables
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| NA.to_string(), |v| fixed(v, digits))
}

fn opt_display<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(|| NA.to_string(), |v| v.to_string())
}

fn clean(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

fn err_cell(e: &Option<String>) -> String {
    e.as_deref().map_or_else(String::new, clean)
}

fn tsv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String, ReportError> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
    }
    Ok(out)
}

fn headers(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn fit_tsv(table: &FitTable) -> String {
    let header = headers(&[
        "field", "year", "obs", "r0", "r_max", "zero_share", "sw_w", "sw_p", "reject", "mu", "se_mu", "sigma2",
        "se_sigma2", "loglik", "n_used", "mu_rescaled", "loglik_rescaled", "alpha", "m", "error",
    ]);
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.field.clone(),
                r.year.to_string(),
                r.obs.to_string(),
                opt(r.r0, 1),
                opt_display(r.r_max),
                opt(r.zero_share, 3),
                opt(r.sw_w, 3),
                opt(r.sw_p, 3),
                opt_display(r.reject),
                opt(r.mu, 3),
                opt(r.se_mu, 3),
                opt(r.sigma2, 3),
                opt(r.se_sigma2, 3),
                opt(r.loglik, 3),
                opt_display(r.n_used),
                opt(r.mu_rescaled, 3),
                opt(r.loglik_rescaled, 3),
                table.alpha.to_string(),
                table.m.to_string(),
                err_cell(&r.error),
            ]
        })
        .collect();
    tsv(&header, &rows)
}

#[derive(Serialize)]
struct FitLine<'a> {
    #[serde(flatten)]
    row: &'a crate::pipeline::FitRow,
    alpha: f64,
    m: usize,
}

pub fn fit_jsonl(table: &FitTable) -> Result<String, ReportError> {
    jsonl(table.rows.iter().map(|row| FitLine {
        row,
        alpha: table.alpha,
        m: table.m,
    }))
}

pub fn collapse_tsv(out: &CollapseOutput) -> String {
    let header = headers(&[
        "year", "strata", "obs", "mu", "se_mu", "sigma2", "se_sigma2", "loglik", "n_used", "sw_w", "sw_p", "error",
    ]);
    let rows: Vec<Vec<String>> = out
        .rows
        .iter()
        .map(|r| {
            vec![
                r.year.to_string(),
                r.strata.to_string(),
                r.obs.to_string(),
                opt(r.mu, 3),
                opt(r.se_mu, 3),
                opt(r.sigma2, 3),
                opt(r.se_sigma2, 3),
                opt(r.loglik, 3),
                opt_display(r.n_used),
                opt(r.sw_w, 3),
                opt(r.sw_p, 3),
                err_cell(&r.error),
            ]
        })
        .collect();
    tsv(&header, &rows)
}

pub fn collapse_jsonl(out: &CollapseOutput) -> Result<String, ReportError> {
    jsonl(&out.rows)
}

fn curve_text(curve: &CcdfCurve) -> String {
    let mut buf = Vec::new();
    curve.write_tsv(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii numbers")
}

/// Per-stratum rescaled and raw curves, plus merged and model curves per year.
pub fn collapse_curves(out: &CollapseOutput) -> Result<Vec<OutputFile>, ReportError> {
    let names = slugs(out.curves.iter().flat_map(|y| y.strata.iter().map(|s| s.key.field.as_str())))?;
    let mut files = Vec::new();
    for year in &out.curves {
        for s in &year.strata {
            let slug = &names[&s.key.field];
            files.push(OutputFile::text(format!("ccdf_{slug}_{}.tsv", year.year), curve_text(&s.rescaled)));
            files.push(OutputFile::text(format!("rawccdf_{slug}_{}.tsv", year.year), curve_text(&s.raw)));
        }
        if let Some(c) = &year.merged {
            files.push(OutputFile::text(format!("ccdf_merged_{}.tsv", year.year), curve_text(c)));
        }
        if let Some(c) = &year.model {
            files.push(OutputFile::text(format!("ccdf_model_{}.tsv", year.year), curve_text(c)));
        }
    }
    Ok(files)
}

fn css_header(k: usize, with_field: bool) -> Vec<String> {
    let mut h = Vec::new();
    if with_field {
        h.push("field".to_string());
    }
    h.extend(["year".to_string(), "n".to_string()]);
    h.extend((1..=k).map(|i| format!("beta{i}")));
    h.extend((0..=k).map(|i| format!("count_{}", class_name(i))));
    h.extend((0..=k).map(|i| format!("share_{}", class_name(i))));
    h.push("error".to_string());
    h
}

fn padded<T>(values: &[T], len: usize, cell: impl Fn(&T) -> String) -> Vec<String> {
    (0..len).map(|i| values.get(i).map_or_else(|| NA.to_string(), &cell)).collect()
}

fn css_rows(k: usize, rows: &[CssRow], with_field: bool) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = Vec::new();
            if with_field {
                cells.push(r.field.clone().unwrap_or_default());
            }
            cells.push(r.year.to_string());
            cells.push(r.n.to_string());
            cells.extend(padded(&r.betas, k, |b| fixed(*b, 3)));
            cells.extend(padded(&r.counts, k + 1, |c| c.to_string()));
            cells.extend(padded(&r.shares, k + 1, |s| fixed(*s, 1)));
            cells.push(err_cell(&r.error));
            cells
        })
        .collect();
    tsv(&css_header(k, with_field), &body)
}

pub fn css_overall_tsv(t: &CssTables) -> String {
    css_rows(t.k, &t.overall, false)
}

pub fn css_strata_tsv(t: &CssTables) -> String {
    css_rows(t.k, &t.strata, true)
}

pub fn topz_summary_tsv(out: &TopZOutput) -> String {
    let header = headers(&["year", "z", "n_c", "sigma_z", "within_original", "within_rescaled", "error"]);
    let rows: Vec<Vec<String>> = out
        .summary
        .iter()
        .map(|r| {
            vec![
                r.year.to_string(),
                r.z.to_string(),
                r.n_c.to_string(),
                opt(r.sigma_z, 3),
                opt_display(r.within_original),
                opt_display(r.within_rescaled),
                err_cell(&r.error),
            ]
        })
        .collect();
    tsv(&header, &rows)
}

#[derive(Serialize)]
struct ShareLine<'a> {
    field: &'a str,
    n: usize,
    selected: usize,
    share: f64,
    z: f64,
    sigma_z: f64,
    lower: f64,
    upper: f64,
    within: bool,
}

fn share_lines(rep: &TopZReport) -> Vec<ShareLine<'_>> {
    rep.fields
        .iter()
        .map(|f| ShareLine {
            field: &f.field,
            n: f.n,
            selected: f.selected,
            share: f.share,
            z: rep.z,
            sigma_z: rep.sigma_z,
            lower: rep.z - rep.sigma_z,
            upper: rep.z + rep.sigma_z,
            within: f.within,
        })
        .collect()
}

pub fn topz_shares_tsv(rep: &TopZReport) -> String {
    let header = headers(&["field", "n", "selected", "share", "z", "sigma_z", "lower", "upper", "within"]);
    let rows: Vec<Vec<String>> = share_lines(rep)
        .iter()
        .map(|l| {
            vec![
                l.field.to_string(),
                l.n.to_string(),
                l.selected.to_string(),
                fixed(l.share, 1),
                l.z.to_string(),
                fixed(l.sigma_z, 3),
                fixed(l.lower, 3),
                fixed(l.upper, 3),
                l.within.to_string(),
            ]
        })
        .collect();
    tsv(&header, &rows)
}

pub fn topz_shares_jsonl(rep: &TopZReport) -> Result<String, ReportError> {
    jsonl(share_lines(rep))
}

fn pair(stem: &str, tsv: String, jsonl: String) -> [OutputFile; 2] {
    [
        OutputFile::text(format!("{stem}.tsv"), tsv),
        OutputFile::text(format!("{stem}.jsonl"), jsonl),
    ]
}

pub fn fit_files(table: &FitTable) -> Result<Vec<OutputFile>, ReportError> {
    Ok(pair("fit_strata", fit_tsv(table), fit_jsonl(table)?).into())
}

pub fn collapse_files(out: &CollapseOutput) -> Result<Vec<OutputFile>, ReportError> {
    let mut files: Vec<OutputFile> = pair("collapse_years", collapse_tsv(out), collapse_jsonl(out)?).into();
    files.extend(collapse_curves(out)?);
    Ok(files)
}

pub fn css_files(t: &CssTables) -> Result<Vec<OutputFile>, ReportError> {
    let mut files: Vec<OutputFile> = pair("css_overall", css_overall_tsv(t), jsonl(&t.overall)?).into();
    files.extend(pair("css_strata", css_strata_tsv(t), jsonl(&t.strata)?));
    Ok(files)
}

pub fn topz_files(out: &TopZOutput) -> Result<Vec<OutputFile>, ReportError> {
    let mut files: Vec<OutputFile> = pair("topz_summary", topz_summary_tsv(out), jsonl(&out.summary)?).into();
    for rep in &out.reports {
        let stem = format!("topz_{}_z{}_{}", rep.year, rep.z, rep.variant.as_str());
        files.extend(pair(&stem, topz_shares_tsv(rep), topz_shares_jsonl(rep)?));
    }
    Ok(files)
}

/// Writes files into `dir`, creating it if needed.
pub fn write_files(dir: &Path, files: &[OutputFile]) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    for f in files {
        fs::write(dir.join(&f.name), &f.bytes)?;
    }
    Ok(())
}
