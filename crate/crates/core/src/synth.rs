//! Seeded synthetic corpora drawn from per-field lognormal distributions.
//!
//! Field `i` draws from its own ChaCha20 stream (`seed`, stream `i`), so
//! fields are independent of each other and of generation order. Uniforms
//! use the top 53 bits of each 64-bit output, centred in their bin so they
//! lie strictly inside (0, 1); normals come from the inverse normal CDF.
//! Every draw consumes exactly two 64-bit outputs: one for the variate and
//! one for the zero-inflation coin.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::corpus::PublicationRecord;

/// Identity of the random source, stored alongside generated corpora.
pub const GENERATOR: &str = "chacha20 (rand_chacha 0.9, seed_from_u64, stream = field index); \
uniform = ((u64 >> 11) + 0.5) / 2^53; normal = inverse CDF";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("spec has no fields")]
    NoFields,
    #[error("field {0} has size 0")]
    EmptyField(String),
    #[error("field {0}: sigma2 must be positive and finite")]
    Sigma2(String),
    #[error("field {0}: mu must be finite")]
    Mu(String),
    #[error("zero inflation must lie in [0, 1), got {0}")]
    ZeroInflation(f64),
    #[error("continuous draws cannot populate integer read counts")]
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    /// `floor(x + 0.5)`, never below 0.
    #[default]
    RoundHalfUp,
    /// `ceil(x)`, at least 1.
    CeilAtLeastOne,
    /// Keep the real value.
    None,
}

impl Discretization {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Discretization::RoundHalfUp => (x + 0.5).floor().max(0.0),
            Discretization::CeilAtLeastOne => x.ceil().max(1.0),
            Discretization::None => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub label: String,
    pub n: usize,
    pub mu: f64,
    pub sigma2: f64,
}

impl FieldSpec {
    /// A field whose lognormal mean is `mean`.
    pub fn with_mean(label: impl Into<String>, n: usize, mean: f64, sigma2: f64) -> Self {
        Self {
            label: label.into(),
            n,
            mu: mu_for_mean(mean, sigma2),
            sigma2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub fields: Vec<FieldSpec>,
    pub year: i32,
    pub seed: u64,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub zero_inflation: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.fields.is_empty() {
            return Err(SynthError::NoFields);
        }
        for f in &self.fields {
            if f.n == 0 {
                return Err(SynthError::EmptyField(f.label.clone()));
            }
            if !(f.sigma2 > 0.0 && f.sigma2.is_finite()) {
                return Err(SynthError::Sigma2(f.label.clone()));
            }
            if !f.mu.is_finite() {
                return Err(SynthError::Mu(f.label.clone()));
            }
        }
        if !(0.0..1.0).contains(&self.zero_inflation) {
            return Err(SynthError::ZeroInflation(self.zero_inflation));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.fields.iter().map(|f| f.n).sum()
    }
}

/// exp(μ + σ²/2).
pub fn lognormal_mean(mu: f64, sigma2: f64) -> f64 {
    (mu + sigma2 / 2.0).exp()
}

/// The μ giving a lognormal with this mean and σ².
pub fn mu_for_mean(mean: f64, sigma2: f64) -> f64 {
    mean.ln() - sigma2 / 2.0
}

/// Geometrically spaced field means from `low` to `high`.
pub fn spread_means(count: usize, low: f64, high: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![low],
        _ => {
            let ratio = (high / low).ln() / (count - 1) as f64;
            (0..count).map(|i| low * (ratio * i as f64).exp()).collect()
        }
    }
}

pub fn field_label(i: usize) -> String {
    format!("field-{:02}", i + 1)
}

fn uniform(rng: &mut ChaCha20Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn field_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Per-field draws after discretization and zero inflation.
pub fn generate_values(spec: &SynthSpec) -> Result<Vec<Vec<f64>>, SynthError> {
    spec.validate()?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(spec
        .fields
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = field_rng(spec.seed, i);
            let sigma = f.sigma2.sqrt();
            (0..f.n)
                .map(|_| {
                    let z = normal.inverse_cdf(uniform(&mut rng));
                    let coin = uniform(&mut rng);
                    if coin < spec.zero_inflation {
                        0.0
                    } else {
                        spec.discretization.apply((f.mu + sigma * z).exp())
                    }
                })
                .collect()
        })
        .collect())
}

/// Integer-valued corpus; ids are `<year>-<field index>-<draw index>`.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<PublicationRecord>, SynthError> {
    if spec.discretization == Discretization::None {
        return Err(SynthError::Continuous);
    }
    let values = generate_values(spec)?;
    Ok(spec
        .fields
        .iter()
        .zip(values)
        .enumerate()
        .flat_map(|(fi, (f, vals))| {
            vals.into_iter().enumerate().map(move |(j, v)| {
                PublicationRecord::new(
                    format!("{}-{:02}-{:05}", spec.year, fi + 1, j + 1),
                    f.label.clone(),
                    spec.year,
                    v as u64,
                )
            })
        })
        .collect())
}
