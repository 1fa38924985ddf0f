use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use readscale_core::css::Truncation;
use readscale_core::distfit::ZeroPolicy;
use readscale_core::pipeline::{AnalysisConfig, DEFAULT_Z};
use readscale_core::report::TableFormat;
use readscale_core::synth::Discretization;
use readscale_core::topz::TieRule;
use readscale_core::Metric;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "readscale", version, about = "Field-stratified readership analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate and normalize corpus files into one corpus.
    Ingest(IngestArgs),
    /// Look up reader counts for a manifest of DOIs.
    Fetch(FetchArgs),
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Per-stratum lognormal fits and log-normality tests.
    Fit(AnalysisArgs),
    /// Pooled fits of rescaled counts per year, plus CCDF curves.
    Collapse(AnalysisArgs),
    /// Characteristic scores and scales per year and per stratum.
    Css(AnalysisArgs),
    /// Per-field shares of the global top z%, before and after rescaling.
    Topz(AnalysisArgs),
    /// fit, collapse, css and topz in one run.
    Report(AnalysisArgs),
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Corpus file (delimited or .jsonl); repeatable.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Field delimiter for delimited input; defaults to tab for .tsv, comma otherwise.
    #[arg(long)]
    delimiter: Option<char>,
    /// Keep only these publication years; repeatable.
    #[arg(long = "year")]
    years: Vec<i32>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write rejected-row diagnostics as line-JSON to this file.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FetchArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Provider settings (JSON).
    #[arg(long)]
    provider_config: Option<PathBuf>,
    /// Overrides the provider base URL.
    #[arg(long)]
    provider_url: Option<String>,
    /// Cache file; defaults to provider_cache.jsonl in the output directory.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Generation spec (JSON); without it a preset is built from the flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 30)]
    fields: usize,
    #[arg(long, default_value_t = 500)]
    per_field: usize,
    #[arg(long, default_value_t = 1.06)]
    sigma2: f64,
    /// Lowest field mean; field means are spaced geometrically up to --mean-high.
    #[arg(long, default_value_t = 6.2)]
    mean_low: f64,
    #[arg(long, default_value_t = 44.7)]
    mean_high: f64,
    #[arg(long, default_value_t = 2010)]
    year: i32,
    #[arg(long, value_enum, default_value_t = DiscretizationArg::RoundHalfUp)]
    discretization: DiscretizationArg,
    #[arg(long, default_value_t = 0.0)]
    zero_inflation: f64,
}

#[derive(Args, Debug, Clone)]
struct AnalysisArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output directory for tables and curve files; console only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Console table format.
    #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
    format: FormatArg,
    #[arg(long, value_enum, default_value_t = MetricArg::Reads)]
    metric: MetricArg,
    #[arg(long, value_enum, default_value_t = ZeroPolicyArg::Exclude)]
    zero_policy: ZeroPolicyArg,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    alpha: f64,
    /// Bonferroni family size; defaults to the number of tests run.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    m: Option<u64>,
    /// Top-z percentage, strictly between 0 and 100; repeatable.
    #[arg(long = "z", value_parser = parse_z)]
    z: Vec<f64>,
    /// Number of characteristic scores.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, value_enum, default_value_t = TieArg::Rank)]
    tie_rule: TieArg,
    /// Truncation rule for characteristic scores.
    #[arg(long, value_enum, default_value_t = CssStrictArg::Ge)]
    css_strict: CssStrictArg,
}

fn parse_z(s: &str) -> Result<f64, String> {
    let z: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if z > 0.0 && z < 100.0 {
        Ok(z)
    } else {
        Err(format!("z must lie strictly between 0 and 100, got {s}"))
    }
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie strictly between 0 and 1, got {s}"))
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    Tsv,
    Jsonl,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum MetricArg {
    Reads,
    Cites,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ZeroPolicyArg {
    Exclude,
    Shift1,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum TieArg {
    Rank,
    Threshold,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum CssStrictArg {
    Ge,
    Gt,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DiscretizationArg {
    RoundHalfUp,
    CeilAtLeastOne,
}

impl AnalysisArgs {
    fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            metric: match self.metric {
                MetricArg::Reads => Metric::Reads,
                MetricArg::Cites => Metric::Cites,
            },
            zero_policy: match self.zero_policy {
                ZeroPolicyArg::Exclude => ZeroPolicy::Exclude,
                ZeroPolicyArg::Shift1 => ZeroPolicy::ShiftOne,
            },
            alpha: self.alpha,
            m: self.m.map(|m| m as usize),
            z_values: if self.z.is_empty() { DEFAULT_Z.to_vec() } else { self.z.clone() },
            k: self.k as usize,
            years: self.input.years.clone(),
            tie: match self.tie_rule {
                TieArg::Rank => TieRule::Rank,
                TieArg::Threshold => TieRule::Threshold,
            },
            truncation: match self.css_strict {
                CssStrictArg::Ge => Truncation::AtLeast,
                CssStrictArg::Gt => Truncation::Above,
            },
        }
    }

    fn table_format(&self) -> TableFormat {
        match self.format {
            FormatArg::Tsv => TableFormat::Tsv,
            FormatArg::Jsonl => TableFormat::Jsonl,
        }
    }
}

impl DiscretizationArg {
    fn value(self) -> Discretization {
        match self {
            DiscretizationArg::RoundHalfUp => Discretization::RoundHalfUp,
            DiscretizationArg::CeilAtLeastOne => Discretization::CeilAtLeastOne,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Fetch(a) => commands::fetch(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Fit(a) => commands::analyze(&a, commands::Step::Fit),
        Command::Collapse(a) => commands::analyze(&a, commands::Step::Collapse),
        Command::Css(a) => commands::analyze(&a, commands::Step::Css),
        Command::Topz(a) => commands::analyze(&a, commands::Step::Topz),
        Command::Report(a) => commands::analyze(&a, commands::Step::Report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
