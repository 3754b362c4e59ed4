//! NASA POWER hourly point client.
//!
//! Requests are sequential and retried with exponential backoff. The raw
//! response is stored verbatim next to a `.meta` record of the URL and the
//! retrieval time.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use chrono::{NaiveDate, SecondsFormat, Utc};

use crate::data::{SITE_LAT, SITE_LON};
use crate::error::FetchError;

pub const DEFAULT_ENDPOINT: &str = "https://power.larc.nasa.gov/api/temporal/hourly/point";

/// Overrides the endpoint, mainly for offline test doubles.
pub const ENDPOINT_ENV: &str = "TCNFORMER_POWER_ENDPOINT";

#[derive(Clone, Debug, PartialEq)]
pub struct PowerRequest {
    pub lat: f64,
    pub lon: f64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub endpoint: String,
}

impl PowerRequest {
    /// Request for the study site, honoring the endpoint override.
    pub fn site(start: NaiveDate, end: NaiveDate) -> Self {
        Self {
            lat: SITE_LAT,
            lon: SITE_LON,
            start,
            end,
            endpoint: endpoint_from_env(),
        }
    }

    pub fn url(&self) -> String {
        format!(
            "{}?parameters=WS10M&community=RE&longitude={}&latitude={}&start={}&end={}&format=CSV&time-standard=UTC",
            self.endpoint,
            self.lon,
            self.lat,
            self.start.format("%Y%m%d"),
            self.end.format("%Y%m%d"),
        )
    }
}

pub fn endpoint_from_env() -> String {
    std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| DEFAULT_ENDPOINT.to_string())
}

#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

fn attempt(url: &str, timeout: Duration) -> Result<Vec<u8>, String> {
    let resp = ureq::get(url).timeout(timeout).call().map_err(|e| match e {
        ureq::Error::Status(code, _) => format!("HTTP status {code}"),
        ureq::Error::Transport(t) => format!("transport: {t}"),
    })?;
    let mut body = Vec::new();
    resp.into_reader()
        .read_to_end(&mut body)
        .map_err(|e| format!("reading body: {e}"))?;
    if body.is_empty() {
        return Err("empty payload".into());
    }
    Ok(body)
}

/// Downloads the raw CSV, retrying transport failures, error statuses and
/// empty bodies.
pub fn fetch_raw(req: &PowerRequest, policy: RetryPolicy) -> Result<Vec<u8>, FetchError> {
    let url = req.url();
    let mut delay = policy.base_delay;
    let mut last = String::new();
    for i in 0..policy.attempts {
        if i > 0 {
            thread::sleep(delay);
            delay *= 2;
        }
        match attempt(&url, policy.timeout) {
            Ok(body) => return Ok(body),
            Err(e) => last = e,
        }
    }
    Err(FetchError::Exhausted { attempts: policy.attempts, last })
}

/// Metadata sidecar path for a raw download.
pub fn meta_path(raw: &Path) -> PathBuf {
    let mut name = raw.file_name().unwrap_or_default().to_os_string();
    name.push(".meta");
    raw.with_file_name(name)
}

/// Downloads and persists the raw response at `out` plus its `.meta` record.
pub fn fetch_nasa_power(
    req: &PowerRequest,
    policy: RetryPolicy,
    out: &Path,
) -> Result<Vec<u8>, FetchError> {
    let body = fetch_raw(req, policy)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, &body)?;
    let meta = format!(
        "url={}\nretrieved_at={}\n",
        req.url(),
        Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
    );
    fs::write(meta_path(out), meta)?;
    Ok(body)
}
