//! Model backends: an HTTP client for OpenAI-compatible servers and a
//! scripted mock for offline runs.

mod http;
mod image;
mod mock;
mod wire;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use thiserror::Error;

pub use self::http::{HttpBackend, HttpSettings, API_KEY_ENV};
pub use self::image::{decode_png, encode_image};
pub use self::mock::{MockBackend, MockCall, MockReply, MockRule, MockScript, MockScriptRule, RequestMatcher, DEFAULT_MOCK_EMBED_DIM};
pub use self::wire::{
    ChatRequest, ChatResponse, ContentPart, EmbeddingRequest, EmbeddingResponse, ImageData, Message,
    MessageRole,
};

use crate::types::AgentRole;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint unavailable after {attempts} attempts: {last_error}")]
    EndpointUnavailable { attempts: u32, last_error: String },
    #[error("request exceeded {0} ms deadline")]
    Timeout(u64),
    #[error("endpoint rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cannot decode image for sample {sample_id}: {reason}")]
    Decode { sample_id: String, reason: String },
}

/// Anything that can answer vision-chat and embedding requests.
#[async_trait]
pub trait Backend: Send + Sync {
    /// `role` tags the pipeline stage issuing the request; HTTP backends
    /// ignore it, the mock uses it for matching.
    async fn chat(&self, role: AgentRole, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// One wire request; callers batch through [`embed_texts`].
    async fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError>;
}

#[async_trait]
impl<B: Backend + ?Sized> Backend for Arc<B> {
    async fn chat(&self, role: AgentRole, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(role, request).await
    }

    async fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
        (**self).embed(request).await
    }
}

/// Exponential backoff schedule for transient failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(16));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

pub const DEFAULT_EMBED_BATCH: usize = 64;

/// Embeds `texts` in wire batches of at most `batch` inputs, checking that
/// every vector has the same dimension.
pub async fn embed_texts(
    backend: &dyn Backend,
    model: &str,
    texts: &[String],
    batch: usize,
) -> Result<Vec<Vec<f64>>, BackendError> {
    if texts.is_empty() {
        return Err(BackendError::InvalidInput("no texts to embed".into()));
    }
    if batch == 0 {
        return Err(BackendError::InvalidInput("embedding batch size must be >= 1".into()));
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch) {
        let request = EmbeddingRequest {
            model: model.to_string(),
            inputs: chunk.to_vec(),
        };
        let response = backend.embed(&request).await?;
        if response.vectors.len() != chunk.len() {
            return Err(BackendError::MalformedResponse(format!(
                "{} embeddings for {} inputs",
                response.vectors.len(),
                chunk.len()
            )));
        }
        out.extend(response.vectors);
    }
    let dim = out[0].len();
    if dim == 0 {
        return Err(BackendError::DimensionMismatch { expected: 1, found: 0 });
    }
    if let Some(bad) = out.iter().find(|v| v.len() != dim) {
        return Err(BackendError::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    Ok(out)
}

/// Builds a backend from an endpoint string: `mock:<script.json>` loads a
/// scripted mock, anything else is treated as HTTP base URLs.
pub fn backend_from_endpoints(
    endpoints: &[String],
    settings: HttpSettings,
) -> Result<Arc<dyn Backend>, crate::error::ConfigError> {
    match endpoints {
        [] => Err(crate::error::ConfigError::Invalid("no endpoint configured".into())),
        [single] if single.starts_with("mock:") => {
            let path = std::path::Path::new(single.trim_start_matches("mock:"));
            Ok(Arc::new(MockBackend::from_script_file(path)?))
        }
        many => Ok(Arc::new(HttpBackend::new(many.to_vec(), settings)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn embed_batches_by_ceiling() {
        let mock = MockBackend::new(vec![], MockReply::Text(String::new()));
        let texts: Vec<String> = (0..1000).map(|i| format!("text {i}")).collect();
        let vectors = embed_texts(&mock, "e5", &texts, 64).await.unwrap();
        assert_eq!(vectors.len(), 1000);
        assert_eq!(mock.embed_calls(), 16);
    }

    #[tokio::test]
    async fn embed_is_deterministic_in_mock() {
        let mock = MockBackend::new(vec![], MockReply::Text(String::new()));
        let texts = vec!["same words".to_string(), "same words".to_string()];
        let v = embed_texts(&mock, "e5", &texts, 8).await.unwrap();
        assert_eq!(v[0], v[1]);
    }

    #[tokio::test]
    async fn embed_rejects_empty_input() {
        let mock = MockBackend::new(vec![], MockReply::Text(String::new()));
        assert!(matches!(
            embed_texts(&mock, "e5", &[], 8).await,
            Err(BackendError::InvalidInput(_))
        ));
    }

    struct Ragged;

    #[async_trait]
    impl Backend for Ragged {
        async fn chat(&self, _: AgentRole, _: &ChatRequest) -> Result<ChatResponse, BackendError> {
            unreachable!()
        }
        async fn embed(&self, r: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
            Ok(EmbeddingResponse {
                vectors: r.inputs.iter().map(|t| vec![0.0; t.len()]).collect(),
            })
        }
    }

    #[tokio::test]
    async fn embed_detects_dimension_mismatch() {
        let texts = vec!["ab".to_string(), "abc".to_string()];
        assert_eq!(
            embed_texts(&Ragged, "m", &texts, 1).await,
            Err(BackendError::DimensionMismatch { expected: 2, found: 3 })
        );
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_secs(2));
        assert_eq!(p.delay(10), Duration::from_secs(8));
    }
}
