use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use readscale_core::ingest::{self, Format, IngestReport, ManifestEntry, ParseOptions};
use readscale_core::pipeline;
use readscale_core::report::{self, OutputFile, TableFormat};
use readscale_core::synth::{self, FieldSpec, SynthSpec};
use readscale_core::PublicationRecord;
use readscale_fetch::{fetch_counts, normalize_doi, Cache, ProviderConfig};
use serde::Serialize;

use crate::{AnalysisArgs, FetchArgs, IngestArgs, InputArgs, SynthArgs};

pub const CORPUS_FILE: &str = "corpus.tsv";
const DEFAULT_KEY_ENV: &str = "READSCALE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Fit,
    Collapse,
    Css,
    Topz,
    Report,
}

#[derive(Serialize)]
struct FileDiagnostic<'a> {
    file: &'a str,
    line: u64,
    reason: &'a str,
}

struct Loaded<T> {
    items: Vec<T>,
    reports: Vec<(PathBuf, IngestReport)>,
}

impl<T> Loaded<T> {
    fn summarize(&self) {
        for (path, r) in &self.reports {
            eprintln!(
                "{}: {} rows, {} accepted, {} rejected",
                path.display(),
                r.total(),
                r.accepted,
                r.rejected
            );
            if !r.ignored_columns.is_empty() {
                log::info!("{}: ignored columns {:?}", path.display(), r.ignored_columns);
            }
        }
    }

    fn write_diagnostics(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        for (file, r) in &self.reports {
            let file = file.to_string_lossy();
            for d in &r.diagnostics {
                serde_json::to_writer(&mut w, &FileDiagnostic { file: &file, line: d.line, reason: &d.reason })?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_options(path: &Path, delimiter: Option<char>) -> Result<ParseOptions> {
    let format = Format::from_path(path);
    let delimiter = match delimiter {
        Some(c) if c.is_ascii() => c as u8,
        Some(c) => bail!("delimiter {c:?} is not a single-byte character"),
        None if path.extension().is_some_and(|e| e == "tsv") => b'\t',
        None => b',',
    };
    Ok(ParseOptions {
        format,
        delimiter,
        ..ParseOptions::default()
    })
}

/// Reads every input; ids repeated across files keep their first occurrence.
fn load<T>(
    input: &InputArgs,
    parse: impl Fn(File, &ParseOptions) -> Result<(Vec<T>, IngestReport), ingest::IngestError>,
    id: impl Fn(&T) -> &str,
) -> Result<Loaded<T>> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Loaded {
        items: Vec::new(),
        reports: Vec::new(),
    };
    for path in &input.inputs {
        let opts = parse_options(path, input.delimiter)?;
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let (items, mut report) = parse(file, &opts).with_context(|| format!("reading {}", path.display()))?;
        for (i, item) in items.into_iter().enumerate() {
            if seen.insert(id(&item).to_string()) {
                out.items.push(item);
            } else {
                report.accepted -= 1;
                report.rejected += 1;
                // parsed items do not carry their source line
                report.diagnostics.push(ingest::Diagnostic {
                    line: 0,
                    reason: format!("duplicate id {} in record {} (seen in an earlier input)", id(&item), i + 1),
                });
            }
        }
        out.reports.push((path.clone(), report));
    }
    Ok(out)
}

fn load_corpus(input: &InputArgs) -> Result<Loaded<PublicationRecord>> {
    load(input, ingest::parse_records, |r| r.id.as_str())
}

fn write_corpus(dir: &Path, records: &[PublicationRecord]) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(CORPUS_FILE);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    ingest::write_records(records, BufWriter::new(file), Format::Delimited, b'\t')?;
    Ok(path)
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let loaded = load_corpus(&args.input)?;
    loaded.summarize();
    if let Some(path) = &args.diagnostics {
        loaded.write_diagnostics(path)?;
    }
    let years = &args.input.years;
    let records: Vec<PublicationRecord> = loaded
        .items
        .into_iter()
        .filter(|r| years.is_empty() || years.contains(&r.year))
        .collect();
    let path = write_corpus(&args.out, &records)?;
    eprintln!("{} records written to {}", records.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct SynthMeta<'a> {
    generator: &'a str,
    records: usize,
    spec: &'a SynthSpec,
}

fn synth_spec(args: &SynthArgs) -> Result<SynthSpec> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthSpec {
            fields: synth::spread_means(args.fields, args.mean_low, args.mean_high)
                .into_iter()
                .enumerate()
                .map(|(i, mean)| FieldSpec::with_mean(synth::field_label(i), args.per_field, mean, args.sigma2))
                .collect(),
            year: args.year,
            seed: 0,
            discretization: args.discretization.value(),
            zero_inflation: args.zero_inflation,
        },
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec = synth_spec(args)?;
    let records = synth::generate_corpus(&spec)?;
    let path = write_corpus(&args.out, &records)?;
    let meta = SynthMeta {
        generator: synth::GENERATOR,
        records: records.len(),
        spec: &spec,
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(args.out.join("synth_meta.json"), text)?;
    eprintln!("{} records written to {}", records.len(), path.display());
    Ok(())
}

fn provider_config(args: &FetchArgs) -> Result<ProviderConfig> {
    let mut cfg = match (&args.provider_config, &args.provider_url) {
        (Some(path), _) => ProviderConfig::load(path)?,
        (None, Some(url)) => ProviderConfig::new(url.clone(), DEFAULT_KEY_ENV),
        (None, None) => bail!("either --provider-config or --provider-url is required"),
    };
    if let Some(url) = &args.provider_url {
        cfg.base_url = url.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn fetch(args: &FetchArgs) -> Result<()> {
    let cfg = provider_config(args)?;
    let loaded: Loaded<ManifestEntry> = load(&args.input, ingest::parse_manifest, |e| e.id.as_str())?;
    loaded.summarize();
    let cache_path = args.cache.clone().unwrap_or_else(|| args.out.join("provider_cache.jsonl"));
    let mut cache = Cache::open(&cache_path).with_context(|| format!("opening cache {}", cache_path.display()))?;
    if cache.corrupt_lines() > 0 {
        log::warn!("{}: {} corrupt cache line(s) skipped", cache_path.display(), cache.corrupt_lines());
    }
    let dois: Vec<String> = loaded.items.iter().map(|e| e.id.clone()).collect();
    let key = cfg.api_key().ok();

    let runtime = tokio::runtime::Runtime::new()?;
    let outcome = runtime.block_on(fetch_counts(&dois, &cfg, key.as_deref(), &mut cache))?;

    let by_doi: HashMap<&str, &readscale_fetch::FetchResult> =
        outcome.results.iter().map(|r| (r.doi.as_str(), r)).collect();
    let mut merged = 0;
    let mut records = Vec::new();
    for e in &loaded.items {
        let fetched = by_doi.get(normalize_doi(&e.id).as_str()).and_then(|r| r.reads);
        if fetched.is_some() {
            merged += 1;
        }
        if let Some(reads) = fetched.or(e.reads) {
            records.push(e.clone().into_record(reads));
        }
    }
    let path = write_corpus(&args.out, &records)?;
    let mut w = BufWriter::new(File::create(args.out.join("fetch_results.jsonl"))?);
    for r in &outcome.results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    eprintln!(
        "{} DOIs: {} from cache, {} requests, {} with reads, {} failed",
        outcome.results.len(),
        outcome.cache_hits,
        outcome.requests,
        outcome.with_reads(),
        outcome.failures()
    );
    if merged == 0 {
        log::warn!(
            "no counts merged: no DOI matched above probability {}",
            cfg.min_match_probability
        );
        eprintln!("warning: no counts merged into the corpus");
    }
    eprintln!("{} records written to {}", records.len(), path.display());
    Ok(())
}

fn print_table(files: &[OutputFile], stem: &str, format: TableFormat) -> Result<()> {
    let name = match format {
        TableFormat::Tsv => format!("{stem}.tsv"),
        TableFormat::Jsonl => format!("{stem}.jsonl"),
    };
    let file = files
        .iter()
        .find(|f| f.name == name)
        .with_context(|| format!("no table {name}"))?;
    io::stdout().lock().write_all(&file.bytes)?;
    Ok(())
}

pub fn analyze(args: &AnalysisArgs, step: Step) -> Result<()> {
    let cfg = args.config();
    let loaded = load_corpus(&args.input)?;
    loaded.summarize();
    let records = &loaded.items;

    let mut files = Vec::new();
    let mut primary = None;
    if matches!(step, Step::Fit | Step::Report) {
        files.extend(report::fit_files(&pipeline::fit_table(records, &cfg)?)?);
        primary.get_or_insert("fit_strata");
    }
    if matches!(step, Step::Collapse | Step::Report) {
        let out = pipeline::collapse_table(records, &cfg)?;
        for (key, reason) in &out.skipped {
            log::warn!("{} {}: left out of the pool ({reason})", key.field, key.year);
        }
        files.extend(report::collapse_files(&out)?);
        primary.get_or_insert("collapse_years");
    }
    if matches!(step, Step::Css | Step::Report) {
        files.extend(report::css_files(&pipeline::css_tables(records, &cfg)?)?);
        primary.get_or_insert("css_overall");
    }
    if matches!(step, Step::Topz | Step::Report) {
        files.extend(report::topz_files(&pipeline::topz_tables(records, &cfg)?)?);
        primary.get_or_insert("topz_summary");
    }

    match &args.out {
        Some(dir) => {
            report::write_files(dir, &files)?;
            eprintln!("{} files written to {}", files.len(), dir.display());
        }
        None if step == Step::Report => bail!("report needs --out"),
        None => {}
    }
    if step != Step::Report {
        print_table(&files, primary.expect("one step ran"), args.table_format())?;
    }
    Ok(())
}
