//! Best-effort remote CSV fetch with a local byte cache.
//!
//! The pipeline proper never depends on the network: `fetch` is a
//! convenience that drops endpoint responses into a cache directory, keyed
//! by `(endpoint, symbol, date range)`, where `ingest` can pick them up.
//! Repeating a cached request touches nothing and returns identical bytes —
//! that property is what makes `fetch` safe to leave in scripted pipelines.
//!
//! The default build speaks plain HTTP only (see the `https` cargo feature);
//! sandboxed test environments exercise this against a loopback server.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use crate::error::{bail, CoreError, Result};

/// A remote CSV endpoint. The template is expanded per request with
/// `{symbol}`, `{start}`, `{end}` (ISO dates).
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub url_template: String,
}

impl Endpoint {
    pub fn new(url_template: impl Into<String>) -> Self {
        Endpoint { url_template: url_template.into() }
    }

    fn url_for(&self, symbol: &str, range: (NaiveDate, NaiveDate)) -> String {
        self.url_template
            .replace("{symbol}", symbol)
            .replace("{start}", &range.0.to_string())
            .replace("{end}", &range.1.to_string())
    }

    /// Cache file name: template digest prefix + the request coordinates.
    /// The digest keeps different endpoints from colliding on a symbol.
    fn cache_name(&self, symbol: &str, range: (NaiveDate, NaiveDate)) -> String {
        let mut h = Sha256::new();
        h.update(self.url_template.as_bytes());
        let digest = h.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        let safe: String = symbol
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        format!("{hex}_{safe}_{}_{}.csv", range.0, range.1)
    }
}

// Cache writes are serialized process-wide: concurrent fan-out workers may
// request overlapping symbols and partial files must never be observable.
static CACHE_WRITE: Mutex<()> = Mutex::new(());

/// Fetch one CSV per symbol, consulting the cache first. Returns the cache
/// paths in symbol order. On a cache miss with no usable network the error
/// says how to proceed offline.
pub fn fetch_remote_csv(
    endpoint: &Endpoint,
    symbols: &[String],
    range: (NaiveDate, NaiveDate),
    cache_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if range.0 > range.1 {
        bail!(Validation, "fetch range starts after it ends: {} > {}", range.0, range.1);
    }
    fs::create_dir_all(cache_dir)?;
    let agent = ureq::AgentBuilder::new()
        .timeout_connect(Duration::from_secs(10))
        .timeout(Duration::from_secs(60))
        .build();

    let mut paths = Vec::with_capacity(symbols.len());
    for symbol in symbols {
        let path = cache_dir.join(endpoint.cache_name(symbol, range));
        if path.exists() {
            paths.push(path);
            continue;
        }
        let url = endpoint.url_for(symbol, range);
        let body = match agent.get(&url).call() {
            Ok(resp) => {
                let mut buf = Vec::new();
                resp.into_reader()
                    .read_to_end(&mut buf)
                    .map_err(|e| CoreError::Transport(format!("reading {url}: {e}")))?;
                buf
            }
            Err(ureq::Error::Status(code, _)) => {
                bail!(Transport, "{url} answered HTTP {code}");
            }
            Err(ureq::Error::Transport(t)) => {
                bail!(
                    Offline,
                    "{url} unreachable ({t}); no cache entry at {} — fetch once from a \
                     connected machine or point ingest at a local CSV",
                    path.display()
                );
            }
        };
        // Atomic publish: write-temp-then-rename under the cache lock so a
        // reader never sees a torn file and rerun bytes stay identical.
        let _guard = CACHE_WRITE.lock().expect("cache lock poisoned");
        let tmp = path.with_extension("csv.tmp");
        fs::write(&tmp, &body)?;
        fs::rename(&tmp, &path)?;
        paths.push(path);
    }
    Ok(paths)
}
