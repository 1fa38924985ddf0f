//! Append-only line-JSON cache of provider answers.
//!
//! Entries store what the provider said (raw reader count and match
//! probability); the match threshold is applied when results are read, so
//! one cache serves any threshold.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub doi: String,
    /// Reader count as reported, before any threshold.
    pub readers: Option<u64>,
    pub match_probability: f64,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug)]
pub struct Cache {
    path: PathBuf,
    latest: HashMap<String, CacheEntry>,
    corrupt_lines: usize,
}

impl Cache {
    /// Loads `path`, or starts empty when the file does not exist.
    /// Unparseable lines are skipped and counted.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let mut cache = Cache {
            path,
            latest: HashMap::new(),
            corrupt_lines: 0,
        };
        let file = match File::open(&cache.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => return Err(e),
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CacheEntry>(&line) {
                Ok(entry) => cache.remember(entry),
                Err(e) => {
                    log::warn!("{}:{}: skipping corrupt cache line ({e})", cache.path.display(), i + 1);
                    cache.corrupt_lines += 1;
                }
            }
        }
        Ok(cache)
    }

    // later timestamps win; on equal timestamps the later line wins
    fn remember(&mut self, entry: CacheEntry) {
        match self.latest.get(&entry.doi) {
            Some(old) if old.fetched_at > entry.fetched_at => {}
            _ => {
                self.latest.insert(entry.doi.clone(), entry);
            }
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn lookup(&self, doi: &str) -> Option<&CacheEntry> {
        self.latest.get(&normalize_doi(doi))
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }

    pub fn corrupt_lines(&self) -> usize {
        self.corrupt_lines
    }

    /// Appends entries to the file and makes them visible to lookups.
    pub fn append(&mut self, entries: &[CacheEntry]) -> io::Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut w = BufWriter::new(file);
        for e in entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        for e in entries {
            self.remember(e.clone());
        }
        Ok(())
    }
}

/// Canonical DOI key: trimmed, lowercase, without resolver prefixes.
pub fn normalize_doi(doi: &str) -> String {
    let d = doi.trim().to_lowercase();
    let d = ["https://doi.org/", "http://doi.org/", "https://dx.doi.org/", "http://dx.doi.org/", "doi:"]
        .iter()
        .find_map(|p| d.strip_prefix(p))
        .map(str::to_string)
        .unwrap_or(d);
    d.trim().to_string()
}
