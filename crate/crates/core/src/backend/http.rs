use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use super::wire::{ChatRequest, ChatResponse, EmbeddingRequest, EmbeddingResponse};
use super::{Backend, BackendError, RetryPolicy};
use crate::error::ConfigError;
use crate::types::AgentRole;

/// Environment variable holding the optional bearer token.
pub const API_KEY_ENV: &str = "MARIC_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// In-flight request cap per endpoint.
    pub max_in_flight: usize,
    pub api_key: Option<String>,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }
}

struct Endpoint {
    base: String,
    permits: Semaphore,
}

/// Client for `{endpoint}/v1/chat/completions` and `{endpoint}/v1/embeddings`.
/// Requests rotate across endpoints round-robin.
pub struct HttpBackend {
    client: reqwest::Client,
    endpoints: Vec<Endpoint>,
    next: AtomicUsize,
    settings: HttpSettings,
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(endpoints: Vec<String>, settings: HttpSettings) -> Result<Self, ConfigError> {
        if endpoints.is_empty() {
            return Err(ConfigError::Invalid("no endpoint configured".into()));
        }
        if settings.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max in-flight requests must be >= 1".into()));
        }
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| ConfigError::Invalid(format!("http client: {e}")))?;
        let endpoints = endpoints
            .into_iter()
            .map(|e| Endpoint {
                base: e.trim_end_matches('/').to_string(),
                permits: Semaphore::new(settings.max_in_flight),
            })
            .collect();
        Ok(Self {
            client,
            endpoints,
            next: AtomicUsize::new(0),
            settings,
        })
    }

    async fn attempt(&self, endpoint: &Endpoint, path: &str, body: &str) -> Attempt {
        let _permit = endpoint.permits.acquire().await.expect("semaphore never closed");
        let mut req = self
            .client
            .post(format!("{}{path}", endpoint.base))
            .header("content-type", "application/json")
            .timeout(self.settings.timeout)
            .body(body.to_string());
        if let Some(key) = &self.settings.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Fatal(BackendError::Timeout(self.settings.timeout.as_millis() as u64))
            }
            Err(e) => return Attempt::Transient(format!("{}: {e}", endpoint.base)),
        };
        let status = resp.status();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) if e.is_timeout() => {
                return Attempt::Fatal(BackendError::Timeout(self.settings.timeout.as_millis() as u64))
            }
            Err(e) => return Attempt::Transient(format!("reading body: {e}")),
        };
        if status.is_success() {
            Attempt::Done(text)
        } else if status.as_u16() == 429 || status.is_server_error() {
            Attempt::Transient(format!("HTTP {status}"))
        } else {
            Attempt::Fatal(BackendError::Rejected {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            })
        }
    }

    /// POSTs `body`, retrying connection errors, 429 and 5xx with backoff.
    async fn post_with_retry(&self, path: &str, body: &str) -> Result<String, BackendError> {
        let policy = self.settings.retry;
        let mut last_error = String::new();
        for attempt in 0..=policy.max_retries {
            if attempt > 0 {
                tokio::time::sleep(policy.delay(attempt - 1)).await;
            }
            let idx = self.next.fetch_add(1, Ordering::Relaxed) % self.endpoints.len();
            match self.attempt(&self.endpoints[idx], path, body).await {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg) => {
                    warn!(attempt, %msg, "transient backend failure");
                    last_error = msg;
                }
            }
        }
        Err(BackendError::EndpointUnavailable {
            attempts: policy.max_retries + 1,
            last_error,
        })
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn chat(&self, role: AgentRole, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = request.to_json();
        let started = Instant::now();
        let text = self.post_with_retry("/v1/chat/completions", &body).await?;
        let latency = started.elapsed().as_millis() as u64;
        debug!(%role, latency, "chat completed");
        ChatResponse::from_json(&text, latency)
    }

    async fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
        if request.inputs.is_empty() {
            return Err(BackendError::InvalidInput("no texts to embed".into()));
        }
        let body = serde_json::to_string(request).expect("request serializes");
        let text = self.post_with_retry("/v1/embeddings", &body).await?;
        EmbeddingResponse::from_json(&text, request.inputs.len())
    }
}
