//! HTTP clients for the four model roles.
//!
//! One uniform protocol: `POST {base}/generate|/detect|/inpaint|/embed` with
//! the serialized request type as the JSON body, answered by
//! `{"result": ...}`. 429 and 5xx responses are retried with exponential
//! backoff; requests carry a deterministic `x-request-id` derived from the
//! body so retries are idempotent on the server side. Requests are never
//! mutated, and a per-client limit bounds in-flight calls.

use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    mock::inpaint_output_name, toy_encoder::normalize, BackendError, Detection, DetectionRequest,
    Embedder, EmbeddingRequest, InpaintRequest, Inpainter, ObjectDetector, TextGenRequest,
    TextGenerator,
};
use crate::raster;

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub attempts: u32,
    /// Backoff before the second attempt; doubles each retry.
    pub backoff_base: Duration,
    pub request_timeout: Duration,
    /// Upper bound on concurrent requests through one client.
    pub max_inflight: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff_base: Duration::from_secs(1),
            request_timeout: Duration::from_secs(30),
            max_inflight: 8,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Limiter {
    state: Mutex<usize>,
    cv: Condvar,
    max: usize,
}

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            state: Mutex::new(0),
            cv: Condvar::new(),
            max: max.max(1),
        }
    }

    fn acquire(&self) {
        let mut inflight = self.state.lock().unwrap();
        while *inflight >= self.max {
            inflight = self.cv.wait(inflight).unwrap();
        }
        *inflight += 1;
    }

    fn release(&self) {
        *self.state.lock().unwrap() -= 1;
        self.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct ResultEnvelope<T> {
    result: T,
}

/// Deterministic request id: hex of the body digest's first 16 bytes.
pub fn request_id(body: &[u8]) -> String {
    let digest = Sha256::digest(body);
    hex::encode(&digest[..16])
}

struct HttpClient {
    base_url: String,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    limiter: Arc<Limiter>,
    bearer: Option<String>,
}

impl HttpClient {
    fn new(base_url: String, retry: RetryPolicy) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(retry.request_timeout)
            .build()
            .expect("default TLS-free client construction cannot fail");
        let limiter = Arc::new(Limiter::new(retry.max_inflight));
        let bearer = std::env::var(super::ENV_BEARER_TOKEN).ok().filter(|t| !t.is_empty());
        Self {
            base_url,
            retry,
            client,
            limiter,
            bearer,
        }
    }

    fn post_json<Req: Serialize, Res: DeserializeOwned>(
        &self,
        path: &str,
        req: &Req,
    ) -> Result<Res, BackendError> {
        let body = serde_json::to_vec(req)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let url = format!("{}{}", self.base_url.trim_end_matches('/'), path);
        let req_id = request_id(&body);

        self.limiter.acquire();
        let result = self.post_with_retries(&url, &body, &req_id);
        self.limiter.release();
        result
    }

    fn post_with_retries<Res: DeserializeOwned>(
        &self,
        url: &str,
        body: &[u8],
        req_id: &str,
    ) -> Result<Res, BackendError> {
        let mut last_reason = String::new();
        for attempt in 1..=self.retry.attempts {
            if attempt > 1 {
                let backoff = self.retry.backoff_base * 2u32.pow(attempt - 2);
                std::thread::sleep(backoff);
            }
            let mut builder = self
                .client
                .post(url)
                .header("content-type", "application/json")
                .header("x-request-id", req_id)
                .body(body.to_vec());
            if let Some(token) = &self.bearer {
                builder = builder.bearer_auth(token);
            }
            match builder.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let envelope: ResultEnvelope<Res> = resp
                            .json()
                            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
                        return Ok(envelope.result);
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    let text = resp.text().unwrap_or_default();
                    if !retryable {
                        return Err(BackendError::Rejected(format!("HTTP {status}: {text}")));
                    }
                    last_reason = format!("HTTP {status}: {text}");
                }
                Err(e) => {
                    last_reason = e.to_string();
                }
            }
        }
        Err(BackendError::Unavailable {
            attempts: self.retry.attempts,
            reason: format!("{url}: {last_reason}"),
        })
    }
}

pub struct HttpTextGenerator {
    client: HttpClient,
}

impl HttpTextGenerator {
    pub fn new(base_url: String, retry: RetryPolicy) -> Self {
        Self {
            client: HttpClient::new(base_url, retry),
        }
    }
}

impl TextGenerator for HttpTextGenerator {
    fn generate_text(&self, req: &TextGenRequest) -> Result<String, BackendError> {
        let text: String = self.client.post_json("/generate", req)?;
        if text.trim().is_empty() {
            return Err(BackendError::EmptyResponse);
        }
        Ok(text)
    }
}

pub struct HttpDetector {
    client: HttpClient,
}

impl HttpDetector {
    pub fn new(base_url: String, retry: RetryPolicy) -> Self {
        Self {
            client: HttpClient::new(base_url, retry),
        }
    }
}

impl ObjectDetector for HttpDetector {
    fn detect(&self, req: &DetectionRequest) -> Result<Vec<Detection>, BackendError> {
        let detections: Vec<Detection> = self.client.post_json("/detect", req)?;
        // keep the subset contract regardless of what the server returns
        Ok(detections
            .into_iter()
            .filter(|d| req.candidate_names.iter().any(|c| c == &d.name))
            .collect())
    }
}

#[derive(Deserialize)]
struct InpaintResult {
    png_base64: String,
}

pub struct HttpInpainter {
    client: HttpClient,
    images_dir: PathBuf,
}

impl HttpInpainter {
    pub fn new(base_url: String, retry: RetryPolicy, images_dir: PathBuf) -> Self {
        Self {
            client: HttpClient::new(base_url, retry),
            images_dir,
        }
    }
}

impl Inpainter for HttpInpainter {
    fn inpaint(&self, req: &InpaintRequest) -> Result<String, BackendError> {
        // validate the mask locally when the input image is at hand, so the
        // error surface matches the mock's
        if let Ok((w, h)) = raster::dimensions(std::path::Path::new(&req.image_ref)) {
            if !req.mask.within(w, h) {
                return Err(BackendError::MaskOutOfBounds {
                    mask: req.mask.into(),
                    width: w,
                    height: h,
                });
            }
        }
        let result: InpaintResult = self.client.post_json("/inpaint", req)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(result.png_base64.as_bytes())
            .map_err(|e| BackendError::MalformedResponse(format!("bad png_base64: {e}")))?;
        let out = self.images_dir.join(inpaint_output_name(req));
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| BackendError::ImageUnreadable(e.to_string()))?;
        }
        std::fs::write(&out, bytes).map_err(|e| BackendError::ImageUnreadable(e.to_string()))?;
        Ok(out.to_string_lossy().to_string())
    }
}

pub struct HttpEmbedder {
    client: HttpClient,
    dim: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(base_url: String, retry: RetryPolicy) -> Self {
        Self {
            client: HttpClient::new(base_url, retry),
            dim: OnceLock::new(),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, req: &EmbeddingRequest) -> Result<Vec<f64>, BackendError> {
        let mut vector: Vec<f64> = self.client.post_json("/embed", req)?;
        if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::MalformedResponse(
                "embedding must be a non-empty finite vector".into(),
            ));
        }
        normalize(&mut vector);
        let _ = self.dim.set(vector.len());
        Ok(vector)
    }

    /// Dimension observed on the first successful call; 0 before that.
    fn dim(&self) -> usize {
        self.dim.get().copied().unwrap_or(0)
    }
}
