//! Loading publication records from delimited text and line-JSON.
//!
//! Malformed rows never abort a batch: they are skipped and reported with
//! their line number. Only an unreadable stream or a header lacking one of
//! the mandatory columns (`id`, `field`, `year`, `reads`) is fatal.

use std::collections::HashSet;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::PublicationRecord;

pub const DEFAULT_YEARS: RangeInclusive<i32> = 1900..=2100;

const MANDATORY: [&str; 4] = ["id", "field", "year", "reads"];
const KNOWN: [&str; 5] = ["id", "field", "year", "reads", "cites"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Delimited,
    LineJson,
}

impl Format {
    /// `.jsonl`/`.ndjson`/`.json` mean line-JSON, everything else is delimited.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => Format::LineJson,
            _ => Format::Delimited,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub format: Format,
    pub delimiter: u8,
    pub years: RangeInclusive<i32>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            format: Format::Delimited,
            delimiter: b',',
            years: DEFAULT_YEARS,
        }
    }
}

impl ParseOptions {
    pub fn line_json() -> Self {
        Self {
            format: Format::LineJson,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub diagnostics: Vec<Diagnostic>,
    /// Header columns that were present but not used.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ignored_columns: Vec<String>,
}

impl IngestReport {
    pub fn total(&self) -> usize {
        self.accepted + self.rejected
    }

    fn reject(&mut self, line: u64, reason: impl Into<String>) {
        self.rejected += 1;
        self.diagnostics.push(Diagnostic {
            line,
            reason: reason.into(),
        });
    }

    pub fn merge(&mut self, other: IngestReport) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.diagnostics.extend(other.diagnostics);
        for c in other.ignored_columns {
            if !self.ignored_columns.contains(&c) {
                self.ignored_columns.push(c);
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("input is not valid UTF-8 near line {0}")]
    Encoding(u64),
    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),
    #[error("malformed delimited input: {0}")]
    Csv(String),
}

/// A row whose readership may still be unknown, e.g. before counts are fetched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub field: String,
    pub year: i32,
    pub reads: Option<u64>,
    pub cites: Option<u64>,
}

impl ManifestEntry {
    pub fn into_record(self, reads: u64) -> PublicationRecord {
        PublicationRecord {
            id: self.id,
            field: self.field,
            year: self.year,
            reads,
            cites: self.cites,
        }
    }
}

/// Parses a corpus. Rows with missing or invalid reads are rejected, not imputed.
pub fn parse_records<R: Read>(
    source: R,
    opts: &ParseOptions,
) -> Result<(Vec<PublicationRecord>, IngestReport), IngestError> {
    let (entries, report) = parse_entries(source, opts, true)?;
    let records = entries
        .into_iter()
        .map(|e| {
            let reads = e.reads.expect("reads checked during parsing");
            e.into_record(reads)
        })
        .collect();
    Ok((records, report))
}

/// Like [`parse_records`] but the `reads` column is optional and may be empty.
pub fn parse_manifest<R: Read>(
    source: R,
    opts: &ParseOptions,
) -> Result<(Vec<ManifestEntry>, IngestReport), IngestError> {
    parse_entries(source, opts, false)
}

fn parse_entries<R: Read>(
    source: R,
    opts: &ParseOptions,
    reads_required: bool,
) -> Result<(Vec<ManifestEntry>, IngestReport), IngestError> {
    let mut checker = RowChecker {
        years: opts.years.clone(),
        reads_required,
        seen: HashSet::new(),
        out: Vec::new(),
        report: IngestReport::default(),
    };
    match opts.format {
        Format::Delimited => parse_delimited(source, opts.delimiter, &mut checker)?,
        Format::LineJson => parse_line_json(source, &mut checker)?,
    }
    Ok((checker.out, checker.report))
}

/// Raw cell contents before validation. `None` means absent or empty.
#[derive(Default)]
struct RawRow {
    id: Option<String>,
    field: Option<String>,
    year: Option<Cell>,
    reads: Option<Cell>,
    cites: Option<Cell>,
}

enum Cell {
    Text(String),
    Json(Value),
}

struct RowChecker {
    years: RangeInclusive<i32>,
    reads_required: bool,
    seen: HashSet<String>,
    out: Vec<ManifestEntry>,
    report: IngestReport,
}

impl RowChecker {
    fn push(&mut self, line: u64, raw: RawRow) {
        match self.check(raw) {
            Ok(entry) => {
                self.seen.insert(entry.id.clone());
                self.out.push(entry);
                self.report.accepted += 1;
            }
            Err(reason) => self.report.reject(line, reason),
        }
    }

    fn check(&self, raw: RawRow) -> Result<ManifestEntry, String> {
        let id = raw.id.ok_or("missing id")?;
        let field = raw.field.ok_or("missing field")?;
        let year: i64 = match raw.year {
            None => return Err("missing year".into()),
            Some(cell) => parse_int(&cell).map_err(|_| format!("invalid year {}", cell.show()))?,
        };
        let year = i32::try_from(year).map_err(|_| "year out of range".to_string())?;
        if !self.years.contains(&year) {
            return Err("year out of range".into());
        }
        let reads = match raw.reads {
            None if self.reads_required => return Err("missing reads".into()),
            None => None,
            Some(cell) => Some(parse_count(&cell, "reads")?),
        };
        let cites = raw.cites.map(|c| parse_count(&c, "cites")).transpose()?;
        if self.seen.contains(&id) {
            return Err(format!("duplicate id {id}"));
        }
        Ok(ManifestEntry {
            id,
            field,
            year,
            reads,
            cites,
        })
    }
}

impl Cell {
    fn show(&self) -> String {
        match self {
            Cell::Text(s) => format!("'{s}'"),
            Cell::Json(v) => v.to_string(),
        }
    }
}

fn parse_int(cell: &Cell) -> Result<i64, ()> {
    match cell {
        Cell::Text(s) => i64::from_str(s).map_err(|_| ()),
        Cell::Json(Value::Number(n)) => n.as_i64().ok_or(()),
        Cell::Json(Value::String(s)) => i64::from_str(s.trim()).map_err(|_| ()),
        Cell::Json(_) => Err(()),
    }
}

fn parse_count(cell: &Cell, what: &str) -> Result<u64, String> {
    match parse_int(cell) {
        Ok(v) if v < 0 => Err(format!("negative {what}")),
        Ok(v) => Ok(v as u64),
        Err(()) => {
            // counts beyond i64 are still valid u64s
            let big = match cell {
                Cell::Text(s) => u64::from_str(s).ok(),
                Cell::Json(Value::Number(n)) => n.as_u64(),
                _ => None,
            };
            big.ok_or_else(|| format!("invalid {what} {}", cell.show()))
        }
    }
}

fn non_empty(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

fn parse_delimited<R: Read>(
    source: R,
    delimiter: u8,
    checker: &mut RowChecker,
) -> Result<(), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(source);
    let headers = reader.headers().map_err(csv_fatal)?.clone();
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_lowercase()).collect();
    let column = |name: &str| names.iter().position(|n| n == name);

    for name in MANDATORY {
        if name == "reads" && !checker.reads_required {
            continue;
        }
        if column(name).is_none() {
            return Err(IngestError::MissingColumn(name.to_string()));
        }
    }
    let ignored: Vec<String> = names
        .iter()
        .filter(|n| !KNOWN.contains(&n.as_str()))
        .cloned()
        .collect();
    if !ignored.is_empty() {
        log::warn!("ignoring unknown columns: {}", ignored.join(", "));
        checker.report.ignored_columns = ignored;
    }
    let (id, field, year, reads, cites) = (
        column("id"),
        column("field"),
        column("year"),
        column("reads"),
        column("cites"),
    );

    let mut row = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                let line = row.position().map_or(0, |p| p.line());
                let get = |idx: Option<usize>| idx.and_then(|i| row.get(i)).and_then(non_empty);
                let raw = RawRow {
                    id: get(id),
                    field: get(field),
                    year: get(year).map(Cell::Text),
                    reads: get(reads).map(Cell::Text),
                    cites: get(cites).map(Cell::Text),
                };
                checker.push(line, raw);
            }
            Err(e) => return Err(csv_fatal(e)),
        }
    }
    Ok(())
}

fn csv_fatal(e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Io(io),
        csv::ErrorKind::Utf8 { .. } => IngestError::Encoding(line),
        other => IngestError::Csv(format!("{other:?}")),
    }
}

fn parse_line_json<R: Read>(source: R, checker: &mut RowChecker) -> Result<(), IngestError> {
    let reader = BufReader::new(source);
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx as u64 + 1;
        let line = line.map_err(|e| match e.kind() {
            io::ErrorKind::InvalidData => IngestError::Encoding(lineno),
            _ => IngestError::Io(e),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(obj)) => obj,
            Ok(_) => {
                checker.report.reject(lineno, "not a JSON object");
                continue;
            }
            Err(e) => {
                checker.report.reject(lineno, format!("malformed JSON: {e}"));
                continue;
            }
        };
        let text = |key: &str| match obj.get(key) {
            Some(Value::String(s)) => non_empty(s),
            Some(Value::Number(n)) => Some(n.to_string()),
            _ => None,
        };
        let cell = |key: &str| match obj.get(key) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if s.trim().is_empty() => None,
            Some(v) => Some(Cell::Json(v.clone())),
        };
        let raw = RawRow {
            id: text("id"),
            field: text("field"),
            year: cell("year"),
            reads: cell("reads"),
            cites: cell("cites"),
        };
        checker.push(lineno, raw);
    }
    Ok(())
}

/// Checks an in-memory record set without altering it.
///
/// Counts are unsigned, so negative values are already unrepresentable;
/// duplicates, out-of-range years and blank labels are reported. `line` in
/// each diagnostic is the 1-based position in `records`.
pub fn validate(records: &[PublicationRecord], years: &RangeInclusive<i32>) -> IngestReport {
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (i, r) in records.iter().enumerate() {
        let line = i as u64 + 1;
        let mut problems = Vec::new();
        if r.id.trim().is_empty() {
            problems.push("missing id".to_string());
        }
        if r.field.trim().is_empty() {
            problems.push("missing field".to_string());
        }
        if !years.contains(&r.year) {
            problems.push("year out of range".to_string());
        }
        if !seen.insert(r.id.as_str()) {
            problems.push(format!("duplicate id {}", r.id));
        }
        if problems.is_empty() {
            report.accepted += 1;
        } else {
            report.rejected += 1;
            report
                .diagnostics
                .extend(problems.into_iter().map(|reason| Diagnostic { line, reason }));
        }
    }
    report
}

pub fn write_records<W: Write>(
    records: &[PublicationRecord],
    writer: W,
    format: Format,
    delimiter: u8,
) -> io::Result<()> {
    match format {
        Format::Delimited => {
            let mut w = csv::WriterBuilder::new()
                .delimiter(delimiter)
                .from_writer(writer);
            w.write_record(KNOWN)?;
            for r in records {
                let cites = r.cites.map(|c| c.to_string()).unwrap_or_default();
                w.write_record([
                    r.id.as_str(),
                    r.field.as_str(),
                    &r.year.to_string(),
                    &r.reads.to_string(),
                    &cites,
                ])?;
            }
            w.flush()
        }
        Format::LineJson => {
            let mut w = io::BufWriter::new(writer);
            for r in records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()
        }
    }
}

/// Writes one JSON object per diagnostic, for the sidecar report file.
pub fn write_diagnostics<W: Write>(report: &IngestReport, writer: W) -> io::Result<()> {
    let mut w = io::BufWriter::new(writer);
    for d in &report.diagnostics {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
