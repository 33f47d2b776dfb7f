//! Pluggable clients for the four external model roles: text generation,
//! object grounding, inpainting, and embedding.
//!
//! Every role has an HTTP client speaking a uniform JSON protocol and a
//! deterministic mock, so the whole pipeline runs and tests without real
//! models. Endpoints come from the `BIAUG_LLM_URL`, `BIAUG_DETECTOR_URL`,
//! `BIAUG_INPAINT_URL` and `BIAUG_EMBED_URL` environment variables; a role
//! with no endpoint falls back to its mock.

pub mod http;
pub mod mock;
pub mod toy_encoder;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::BoundingBox;

pub use http::{HttpDetector, HttpEmbedder, HttpInpainter, HttpTextGenerator, RetryPolicy};
pub use mock::{MockConfig, MockDetector, MockInpainter, MockTextGenerator};
pub use toy_encoder::ToyEncoder;

pub const ENV_LLM_URL: &str = "BIAUG_LLM_URL";
pub const ENV_DETECTOR_URL: &str = "BIAUG_DETECTOR_URL";
pub const ENV_INPAINT_URL: &str = "BIAUG_INPAINT_URL";
pub const ENV_EMBED_URL: &str = "BIAUG_EMBED_URL";
/// Optional bearer token passed through on every HTTP request.
pub const ENV_BEARER_TOKEN: &str = "BIAUG_BEARER_TOKEN";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("image unreadable: {0}")]
    ImageUnreadable(String),
    #[error("mask {mask:?} exceeds image bounds {width}x{height}")]
    MaskOutOfBounds {
        mask: [u32; 4],
        width: u32,
        height: u32,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
}

impl BackendError {
    /// Whether a retry with the same request could succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextGenRequest {
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
}

impl TextGenRequest {
    /// Temperature 0 by default: generation stays reproducible across runs.
    pub fn new(prompt: impl Into<String>, seed: u64) -> Result<Self, BackendError> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt must be non-empty".into()));
        }
        Ok(Self {
            prompt,
            temperature: 0.0,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionRequest {
    pub image_ref: String,
    pub candidate_names: Vec<String>,
}

impl DetectionRequest {
    pub fn new(
        image_ref: impl Into<String>,
        candidate_names: Vec<String>,
    ) -> Result<Self, BackendError> {
        if candidate_names.is_empty() {
            return Err(BackendError::InvalidRequest(
                "candidate list must be non-empty".into(),
            ));
        }
        Ok(Self {
            image_ref: image_ref.into(),
            candidate_names,
        })
    }
}

/// One grounded candidate as the detector reports it. The caller attaches
/// the source id when it turns this into a manifest record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image_ref: String,
    pub mask: BoundingBox,
    pub prompt: String,
}

/// What to embed: a caption or an image file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "modality", content = "payload", rename_all = "lowercase")]
pub enum EmbeddingRequest {
    Text(String),
    Image(String),
}

impl EmbeddingRequest {
    pub fn text(s: impl Into<String>) -> Self {
        EmbeddingRequest::Text(s.into())
    }

    pub fn image(path: impl Into<String>) -> Self {
        EmbeddingRequest::Image(path.into())
    }
}

pub trait TextGenerator: Send + Sync {
    /// Produce completion text for a prompt. Mock implementations are pure
    /// functions of `(prompt, seed)`.
    fn generate_text(&self, req: &TextGenRequest) -> Result<String, BackendError>;
}

pub trait ObjectDetector: Send + Sync {
    /// Ground candidate names in an image. Names absent from the result were
    /// simply not detected; the returned names are a subset of the candidates.
    fn detect(&self, req: &DetectionRequest) -> Result<Vec<Detection>, BackendError>;
}

pub trait Inpainter: Send + Sync {
    /// Regenerate the masked region from the prompt and write the result as
    /// a new image file. Pixels outside the mask are preserved; the output
    /// has the input's dimensions. Returns the new image path.
    fn inpaint(&self, req: &InpaintRequest) -> Result<String, BackendError>;
}

pub trait Embedder: Send + Sync {
    /// Embed a caption or image into a unit-norm vector of `dim()` entries.
    fn embed(&self, req: &EmbeddingRequest) -> Result<Vec<f64>, BackendError>;
    fn dim(&self) -> usize;
}

/// The four role clients a pipeline run works against.
#[derive(Clone)]
pub struct BackendSet {
    pub generator: Arc<dyn TextGenerator>,
    pub detector: Arc<dyn ObjectDetector>,
    pub inpainter: Arc<dyn Inpainter>,
    pub embedder: Arc<dyn Embedder>,
}

impl BackendSet {
    /// Build all four role clients from explicit endpoints, falling back to
    /// mocks where an endpoint is `None`. `images_dir` is where inpainted
    /// files land; `seed` feeds the mocks and the toy encoder; `retry`
    /// carries the retry policy and the per-backend in-flight limit.
    pub fn from_endpoints(
        endpoints: &Endpoints,
        mock_config: MockConfig,
        images_dir: PathBuf,
        seed: u64,
        retry: RetryPolicy,
    ) -> Self {
        let generator: Arc<dyn TextGenerator> = match &endpoints.llm_url {
            Some(url) => Arc::new(HttpTextGenerator::new(url.clone(), retry.clone())),
            None => Arc::new(MockTextGenerator::new(mock_config.clone())),
        };
        let detector: Arc<dyn ObjectDetector> = match &endpoints.detector_url {
            Some(url) => Arc::new(HttpDetector::new(url.clone(), retry.clone())),
            None => Arc::new(MockDetector::new(mock_config.clone())),
        };
        let inpainter: Arc<dyn Inpainter> = match &endpoints.inpaint_url {
            Some(url) => Arc::new(HttpInpainter::new(url.clone(), retry.clone(), images_dir.clone())),
            None => Arc::new(MockInpainter::new(images_dir)),
        };
        let embedder: Arc<dyn Embedder> = match &endpoints.embed_url {
            Some(url) => Arc::new(HttpEmbedder::new(url.clone(), retry)),
            None => Arc::new(ToyEncoder::seeded(toy_encoder::DEFAULT_DIM, seed)),
        };
        Self {
            generator,
            detector,
            inpainter,
            embedder,
        }
    }
}

/// Endpoint configuration for the four roles. `None` selects the mock.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    pub llm_url: Option<String>,
    pub detector_url: Option<String>,
    pub inpaint_url: Option<String>,
    pub embed_url: Option<String>,
}

impl Endpoints {
    /// Overlay the `BIAUG_*_URL` environment variables on top of `self`.
    /// Environment values win over configured ones.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_LLM_URL) {
            if !v.is_empty() {
                self.llm_url = Some(v);
            }
        }
        if let Ok(v) = std::env::var(ENV_DETECTOR_URL) {
            if !v.is_empty() {
                self.detector_url = Some(v);
            }
        }
        if let Ok(v) = std::env::var(ENV_INPAINT_URL) {
            if !v.is_empty() {
                self.inpaint_url = Some(v);
            }
        }
        if let Ok(v) = std::env::var(ENV_EMBED_URL) {
            if !v.is_empty() {
                self.embed_url = Some(v);
            }
        }
        self
    }
}
