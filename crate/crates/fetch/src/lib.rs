//! Client for a reader-count provider.
//!
//! DOIs are looked up in batches with `POST {base_url}/lookup`, body a JSON
//! array of DOIs, answer a JSON array of `{doi, readers, match_probability}`.
//! Every answer lands in an append-only cache, and cached DOIs are never
//! requested again.

mod cache;
mod config;
mod rate;
#[cfg(feature = "stub")]
pub mod stub;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{normalize_doi, Cache, CacheEntry};
pub use config::ProviderConfig;
pub use rate::RateLimiter;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("environment variable {0} holding the provider key is not set")]
    MissingKey(String),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error("http client: {0}")]
    Client(String),
    #[error("provider unreachable after {attempts} attempt(s): {message}; {cached} entries cached before the failure")]
    Unreachable {
        attempts: u32,
        message: String,
        cached: usize,
    },
}

/// One provider answer as it comes over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRecord {
    pub doi: String,
    pub readers: Option<u64>,
    pub match_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchResult {
    pub doi: String,
    /// Present only when the match probability clears the threshold.
    pub reads: Option<u64>,
    pub match_probability: Option<f64>,
    pub fetched_at: DateTime<Utc>,
    pub from_cache: bool,
    /// Set when the provider kept refusing the batch; such results are not cached.
    pub error: Option<String>,
}

impl FetchResult {
    fn from_entry(e: &CacheEntry, min_match: f64, from_cache: bool) -> Self {
        Self {
            doi: e.doi.clone(),
            reads: e.readers.filter(|_| e.match_probability > min_match),
            match_probability: Some(e.match_probability),
            fetched_at: e.fetched_at,
            from_cache,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutcome {
    /// One result per distinct DOI, in first-seen input order.
    pub results: Vec<FetchResult>,
    /// HTTP requests issued, retries included.
    pub requests: usize,
    pub cache_hits: usize,
}

impl FetchOutcome {
    pub fn with_reads(&self) -> usize {
        self.results.iter().filter(|r| r.reads.is_some()).count()
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.error.is_some()).count()
    }
}

enum BatchFailure {
    Rejected(String),
    Transport(String),
}

struct Lookup<'a> {
    client: reqwest::Client,
    url: String,
    key: &'a str,
    config: &'a ProviderConfig,
    limiter: RateLimiter,
    requests: Arc<AtomicUsize>,
}

impl Lookup<'_> {
    async fn batch(&self, dois: &[String]) -> Result<Vec<ProviderRecord>, BatchFailure> {
        let mut failure = BatchFailure::Transport("no attempt made".into());
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                tokio::time::sleep(self.config.backoff(attempt - 1)).await;
            }
            self.limiter.acquire().await;
            self.requests.fetch_add(1, Ordering::SeqCst);
            let sent = self.client.post(&self.url).bearer_auth(self.key).json(dois).send().await;
            failure = match sent {
                Ok(resp) if resp.status().is_success() => match resp.bytes().await {
                    Ok(body) => match serde_json::from_slice::<Vec<ProviderRecord>>(&body) {
                        Ok(records) => return Ok(records),
                        Err(e) => BatchFailure::Rejected(format!("malformed response: {e}")),
                    },
                    Err(e) => BatchFailure::Transport(e.to_string()),
                },
                Ok(resp) => BatchFailure::Rejected(format!("HTTP {}", resp.status().as_u16())),
                Err(e) => BatchFailure::Transport(e.to_string()),
            };
            let msg = match &failure {
                BatchFailure::Rejected(m) | BatchFailure::Transport(m) => m,
            };
            log::warn!("lookup attempt {} of {} failed: {msg}", attempt + 1, self.config.max_retries + 1);
        }
        Err(failure)
    }
}

/// Resolves DOIs to reader counts, serving what it can from `cache`.
///
/// `api_key` is only needed when something has to be fetched. A batch the
/// provider keeps rejecting yields per-DOI error results; a provider that
/// cannot be reached at all aborts the run, leaving earlier batches cached.
pub async fn fetch_counts(
    dois: &[String],
    config: &ProviderConfig,
    api_key: Option<&str>,
    cache: &mut Cache,
) -> Result<FetchOutcome, FetchError> {
    config.validate()?;
    let mut seen = HashSet::new();
    let wanted: Vec<String> = dois
        .iter()
        .map(|d| normalize_doi(d))
        .filter(|d| !d.is_empty() && seen.insert(d.clone()))
        .collect();

    let mut found: HashMap<String, FetchResult> = HashMap::new();
    let mut missing = Vec::new();
    for d in &wanted {
        match cache.lookup(d) {
            Some(e) => {
                found.insert(d.clone(), FetchResult::from_entry(e, config.min_match_probability, true));
            }
            None => missing.push(d.clone()),
        }
    }
    let cache_hits = found.len();
    let requests = Arc::new(AtomicUsize::new(0));

    if !missing.is_empty() {
        let key = api_key.ok_or_else(|| FetchError::MissingKey(config.api_key_env.clone()))?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| FetchError::Client(e.to_string()))?;
        let lookup = Lookup {
            client,
            url: config.lookup_url(),
            key,
            config,
            limiter: RateLimiter::new(config.rate_limit),
            requests: requests.clone(),
        };
        let lookup = &lookup;
        let mut batches = stream::iter(missing.chunks(config.batch_size))
            .map(|batch| async move { (batch, lookup.batch(batch).await) })
            .buffer_unordered(config.concurrency);

        let mut cached = 0;
        // this loop is the only cache writer
        while let Some((batch, answer)) = batches.next().await {
            let now = Utc::now();
            match answer {
                Ok(records) => {
                    let mut by_doi: HashMap<String, ProviderRecord> =
                        records.into_iter().map(|r| (normalize_doi(&r.doi), r)).collect();
                    let entries: Vec<CacheEntry> = batch
                        .iter()
                        .map(|d| {
                            let r = by_doi.remove(d);
                            CacheEntry {
                                doi: d.clone(),
                                readers: r.as_ref().and_then(|r| r.readers),
                                // an unanswered DOI is an unmatched one
                                match_probability: r.map_or(0.0, |r| r.match_probability),
                                fetched_at: now,
                            }
                        })
                        .collect();
                    cache.append(&entries)?;
                    cached += entries.len();
                    for e in &entries {
                        found.insert(e.doi.clone(), FetchResult::from_entry(e, config.min_match_probability, false));
                    }
                }
                Err(BatchFailure::Rejected(msg)) => {
                    for d in batch {
                        found.insert(
                            d.clone(),
                            FetchResult {
                                doi: d.clone(),
                                reads: None,
                                match_probability: None,
                                fetched_at: now,
                                from_cache: false,
                                error: Some(msg.clone()),
                            },
                        );
                    }
                }
                Err(BatchFailure::Transport(message)) => {
                    return Err(FetchError::Unreachable {
                        attempts: config.max_retries + 1,
                        message,
                        cached,
                    });
                }
            }
        }
    }

    let results = wanted.iter().filter_map(|d| found.remove(d)).collect();
    Ok(FetchOutcome {
        results,
        requests: requests.load(Ordering::SeqCst),
        cache_hits,
    })
}
