use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::FetchError;

fn default_batch_size() -> usize {
    50
}
fn default_rate_limit() -> f64 {
    2.0
}
fn default_max_retries() -> u32 {
    3
}
fn default_min_match() -> f64 {
    0.90
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_backoff_cap_ms() -> u64 {
    8000
}
fn default_timeout_ms() -> u64 {
    30_000
}

/// Provider connection settings, usually loaded from a JSON file.
///
/// The API key itself never appears here; `api_key_env` names the
/// environment variable that holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    pub api_key_env: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Requests per second.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Reads are kept only when the provider's match probability is
    /// strictly greater than this.
    #[serde(default = "default_min_match")]
    pub min_match_probability: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_initial_ms: u64,
    #[serde(default = "default_backoff_cap_ms")]
    pub backoff_max_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl ProviderConfig {
    pub fn new(base_url: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env: api_key_env.into(),
            batch_size: default_batch_size(),
            rate_limit: default_rate_limit(),
            max_retries: default_max_retries(),
            min_match_probability: default_min_match(),
            concurrency: default_concurrency(),
            backoff_initial_ms: default_backoff_ms(),
            backoff_max_ms: default_backoff_cap_ms(),
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, FetchError> {
        let text = std::fs::read_to_string(path).map_err(|e| FetchError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| FetchError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FetchError> {
        let bad = |msg: &str| Err(FetchError::Config(msg.to_string()));
        if self.base_url.trim().is_empty() {
            return bad("base_url is empty");
        }
        if self.api_key_env.trim().is_empty() {
            return bad("api_key_env is empty");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.rate_limit > 0.0 && self.rate_limit.is_finite()) {
            return bad("rate_limit must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_match_probability) {
            return bad("min_match_probability must lie in [0, 1]");
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1");
        }
        Ok(())
    }

    /// Reads the API key from the configured environment variable.
    pub fn api_key(&self) -> Result<String, FetchError> {
        std::env::var(&self.api_key_env).map_err(|_| FetchError::MissingKey(self.api_key_env.clone()))
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_initial_ms
            .saturating_mul(1u64.checked_shl(attempt).unwrap_or(u64::MAX))
            .min(self.backoff_max_ms);
        Duration::from_millis(ms)
    }

    pub fn lookup_url(&self) -> String {
        format!("{}/lookup", self.base_url.trim_end_matches('/'))
    }
}
