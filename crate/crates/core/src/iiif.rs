//! IIIF Image API URL construction and image integrity checks.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ImageRef;

/// Everything except RFC 3986 unreserved characters.
const IDENTIFIER: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IiifError {
    #[error("empty image identifier")]
    EmptyIdentifier,
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApiVersion {
    V2,
    V3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the jittered delay after failed attempt `k` (0-based):
    /// `base * 2^k`.
    pub fn backoff_ceiling(&self, attempt: u32) -> Duration {
        self.base_backoff
            .saturating_mul(1u32.checked_shl(attempt.min(20)).unwrap_or(u32::MAX))
    }

    /// Full jitter: uniform in `[0, ceiling]`.
    pub fn jittered<R: Rng + ?Sized>(&self, attempt: u32, rng: &mut R) -> Duration {
        let ceiling = self.backoff_ceiling(attempt).as_micros() as u64;
        Duration::from_micros(if ceiling == 0 {
            0
        } else {
            rng.random_range(0..=ceiling)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IiifEndpoint {
    base_url: String,
    pub api_version: ApiVersion,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl IiifEndpoint {
    pub fn new(base_url: &str, api_version: ApiVersion) -> Result<Self, IiifError> {
        let base = base_url.trim().trim_end_matches('/');
        if base.is_empty() {
            return Err(IiifError::InvalidEndpoint(base_url.to_string()));
        }
        Ok(Self {
            base_url: base.to_string(),
            api_version,
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Result<Self, IiifError> {
        if retry.max_attempts == 0 {
            return Err(IiifError::InvalidEndpoint(
                "max_attempts must be at least 1".into(),
            ));
        }
        self.retry = retry;
        Ok(self)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn image_base(&self, identifier: &str) -> Result<String, IiifError> {
        if identifier.is_empty() {
            return Err(IiifError::EmptyIdentifier);
        }
        Ok(format!(
            "{}/{}",
            self.base_url,
            utf8_percent_encode(identifier, IDENTIFIER)
        ))
    }

    pub fn info_url(&self, identifier: &str) -> Result<String, IiifError> {
        Ok(format!("{}/info.json", self.image_base(identifier)?))
    }

    pub fn full_image_url(&self, identifier: &str) -> Result<String, IiifError> {
        let size = match self.api_version {
            ApiVersion::V2 => "full",
            ApiVersion::V3 => "max",
        };
        Ok(format!(
            "{}/full/{size}/0/default.jpg",
            self.image_base(identifier)?
        ))
    }
}

pub fn info_url(endpoint: &IiifEndpoint, identifier: &str) -> Result<String, IiifError> {
    endpoint.info_url(identifier)
}

pub fn full_image_url(endpoint: &IiifEndpoint, identifier: &str) -> Result<String, IiifError> {
    endpoint.full_image_url(identifier)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("network access attempted from an isolated node: {0}")]
    IsolationViolation(String),
}

/// Executes GET requests. Injected so checks run against a real server, a
/// local directory or a scripted double.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str, timeout: Duration) -> Result<HttpResponse, TransportError>;
}

/// HTTP(S) transport; `file://` URLs are served from the local filesystem.
#[derive(Debug, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn get(&self, url: &str, timeout: Duration) -> Result<HttpResponse, TransportError> {
        if url.starts_with("file://") {
            return FileTransport.get(url, timeout);
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .get(url)
            .call()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Serves `file:///dir/...` URLs from disk, path segments taken verbatim
/// (so `a%2Fb` is a single directory name). Missing files answer 404.
#[derive(Debug, Default)]
pub struct FileTransport;

impl FileTransport {
    pub fn path_for(url: &str) -> Option<PathBuf> {
        url.strip_prefix("file://").map(PathBuf::from)
    }
}

impl Transport for FileTransport {
    fn get(&self, url: &str, _timeout: Duration) -> Result<HttpResponse, TransportError> {
        let path = Self::path_for(url)
            .ok_or_else(|| TransportError::Network(format!("not a file URL: {url}")))?;
        match std::fs::read(&path) {
            Ok(body) => Ok(HttpResponse::ok(body)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(HttpResponse::status(404)),
            Err(e) => Err(TransportError::Network(e.to_string())),
        }
    }
}

/// Transport for nodes without network access: every request is refused.
#[derive(Debug, Default)]
pub struct NullTransport;

impl Transport for NullTransport {
    fn get(&self, url: &str, _timeout: Duration) -> Result<HttpResponse, TransportError> {
        Err(TransportError::IsolationViolation(url.to_string()))
    }
}

/// Scripted in-memory transport. Unknown URLs answer 404; a URL can be made
/// to fail a number of times before answering.
#[derive(Debug, Default)]
pub struct MemoryTransport {
    routes: Mutex<HashMap<String, HttpResponse>>,
    failures: Mutex<HashMap<String, usize>>,
    requests: AtomicUsize,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn route(&self, url: impl Into<String>, response: HttpResponse) {
        self.routes.lock().unwrap().insert(url.into(), response);
    }

    pub fn fail_times(&self, url: impl Into<String>, times: usize) {
        self.failures.lock().unwrap().insert(url.into(), times);
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Transport for MemoryTransport {
    fn get(&self, url: &str, _timeout: Duration) -> Result<HttpResponse, TransportError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        if let Some(left) = self.failures.lock().unwrap().get_mut(url) {
            if *left > 0 {
                *left -= 1;
                return Err(TransportError::Network("connection reset".into()));
            }
        }
        Ok(self
            .routes
            .lock()
            .unwrap()
            .get(url)
            .cloned()
            .unwrap_or_else(|| HttpResponse::status(404)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntegrityStatus {
    Ok,
    Missing,
    Corrupt,
    TransportError,
}

impl fmt::Display for IntegrityStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntegrityStatus::Ok => "OK",
            IntegrityStatus::Missing => "MISSING",
            IntegrityStatus::Corrupt => "CORRUPT",
            IntegrityStatus::TransportError => "TRANSPORT_ERROR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityResult {
    /// The checked image, with dimensions and `verified` filled in on success.
    pub image: ImageRef,
    pub status: IntegrityStatus,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub attempts: u32,
    pub detail: String,
    pub checked_at: DateTime<Utc>,
}

/// Outcome of one fetch with retries.
pub(crate) enum Fetched {
    Body(Vec<u8>, u32),
    Missing(u32),
    Failed(String, u32),
}

/// GET with retry on transport errors and 5xx/429 answers. 404 and 410 are
/// final. Isolation violations are never retried.
pub(crate) fn fetch_with_retry(
    url: &str,
    endpoint: &IiifEndpoint,
    transport: &dyn Transport,
    sleep: &dyn Fn(Duration),
) -> Fetched {
    let policy = endpoint.retry;
    let mut rng = rand::rng();
    let mut last = String::new();
    for attempt in 0..policy.max_attempts.max(1) {
        if attempt > 0 {
            sleep(policy.jittered(attempt - 1, &mut rng));
        }
        let tries = attempt + 1;
        match transport.get(url, endpoint.timeout) {
            Ok(r) if (200..300).contains(&r.status) => return Fetched::Body(r.body, tries),
            Ok(r) if r.status == 404 || r.status == 410 => return Fetched::Missing(tries),
            Ok(r) if r.status >= 500 || r.status == 429 => last = format!("HTTP {}", r.status),
            Ok(r) => return Fetched::Failed(format!("HTTP {}", r.status), tries),
            Err(e @ TransportError::IsolationViolation(_)) => {
                return Fetched::Failed(e.to_string(), tries)
            }
            Err(e) => last = e.to_string(),
        }
    }
    Fetched::Failed(last, policy.max_attempts.max(1))
}

/// Reads positive `width` and `height` from an info.json body.
pub fn parse_info_dimensions(body: &[u8]) -> Option<(u32, u32)> {
    let v: serde_json::Value = serde_json::from_slice(body).ok()?;
    let dim = |k: &str| {
        v.get(k)?
            .as_u64()
            .filter(|d| *d > 0)
            .and_then(|d| u32::try_from(d).ok())
    };
    Some((dim("width")?, dim("height")?))
}

pub fn check_integrity(
    endpoint: &IiifEndpoint,
    image: &ImageRef,
    transport: &dyn Transport,
) -> IntegrityResult {
    check_integrity_with(endpoint, image, transport, &std::thread::sleep)
}

/// [`check_integrity`] with an injectable sleep, for hermetic retry tests.
pub fn check_integrity_with(
    endpoint: &IiifEndpoint,
    image: &ImageRef,
    transport: &dyn Transport,
    sleep: &dyn Fn(Duration),
) -> IntegrityResult {
    let mut result = IntegrityResult {
        image: image.clone(),
        status: IntegrityStatus::TransportError,
        width: None,
        height: None,
        attempts: 0,
        detail: String::new(),
        checked_at: Utc::now(),
    };
    let url = match endpoint.info_url(&image.iiif_identifier) {
        Ok(u) => u,
        Err(e) => {
            result.status = IntegrityStatus::Missing;
            result.detail = e.to_string();
            return result;
        }
    };
    match fetch_with_retry(&url, endpoint, transport, sleep) {
        Fetched::Body(body, tries) => {
            result.attempts = tries;
            match parse_info_dimensions(&body) {
                Some((w, h)) => {
                    result.status = IntegrityStatus::Ok;
                    result.width = Some(w);
                    result.height = Some(h);
                    result.image.width = Some(w);
                    result.image.height = Some(h);
                    result.image.verified = true;
                }
                None => {
                    result.status = IntegrityStatus::Corrupt;
                    result.detail = "info.json lacks positive width/height".into();
                }
            }
        }
        Fetched::Missing(tries) => {
            result.attempts = tries;
            result.status = IntegrityStatus::Missing;
        }
        Fetched::Failed(detail, tries) => {
            result.attempts = tries;
            result.detail = detail;
        }
    }
    result.checked_at = Utc::now();
    result
}

/// Fetches the full image. `None` detail means missing.
pub fn fetch_full_image(
    endpoint: &IiifEndpoint,
    identifier: &str,
    transport: &dyn Transport,
    sleep: &dyn Fn(Duration),
) -> Result<Vec<u8>, (IntegrityStatus, String)> {
    let url = endpoint
        .full_image_url(identifier)
        .map_err(|e| (IntegrityStatus::Missing, e.to_string()))?;
    match fetch_with_retry(&url, endpoint, transport, sleep) {
        Fetched::Body(body, _) if body.is_empty() => {
            Err((IntegrityStatus::Corrupt, "empty image".into()))
        }
        Fetched::Body(body, _) => Ok(body),
        Fetched::Missing(_) => Err((IntegrityStatus::Missing, "image not found".into())),
        Fetched::Failed(detail, _) => Err((IntegrityStatus::TransportError, detail)),
    }
}

/// Checks many images with at most `concurrency` requests in flight.
/// Results come back in input order. With `verify_image`, an image whose
/// info.json is fine must also download non-empty.
pub fn check_batch(
    endpoint: &IiifEndpoint,
    images: &[ImageRef],
    transport: &dyn Transport,
    concurrency: usize,
    verify_image: bool,
) -> Vec<IntegrityResult> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<IntegrityResult>>> =
        images.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..concurrency.clamp(1, images.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(image) = images.get(i) else { break };
                let mut r = check_integrity(endpoint, image, transport);
                if verify_image && r.status == IntegrityStatus::Ok {
                    if let Err((status, detail)) = fetch_full_image(
                        endpoint,
                        &image.iiif_identifier,
                        transport,
                        &std::thread::sleep,
                    ) {
                        r.status = status;
                        r.detail = detail;
                        r.image.verified = false;
                    }
                }
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every image checked"))
        .collect()
}

/// Inverse of the identifier encoding used in URLs.
pub fn decode_identifier(segment: &str) -> String {
    percent_decode_str(segment).decode_utf8_lossy().into_owned()
}

/// Writes `image,status,width,height,attempts,detail,checked_at` CSV.
pub fn write_results_csv<W: std::io::Write>(
    results: &[IntegrityResult],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "register_id",
        "sequence_index",
        "iiif_identifier",
        "status",
        "width",
        "height",
        "attempts",
        "detail",
        "checked_at",
    ])?;
    for r in results {
        w.write_record([
            r.image.register_id.clone(),
            r.image.sequence_index.to_string(),
            r.image.iiif_identifier.clone(),
            r.status.to_string(),
            r.width.map(|v| v.to_string()).unwrap_or_default(),
            r.height.map(|v| v.to_string()).unwrap_or_default(),
            r.attempts.to_string(),
            r.detail.clone(),
            r.checked_at.to_rfc3339(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
