use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::wire::{ChatRequest, ChatResponse, EmbeddingRequest, EmbeddingResponse};
use super::{Backend, BackendError};
use crate::error::ConfigError;
use crate::types::AgentRole;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestMatcher {
    /// Matches when the role agrees (or is unset) and `contains` occurs in
    /// the request's text parts or image data URI. An empty needle matches
    /// every request of that role.
    Stage {
        role: Option<AgentRole>,
        contains: String,
    },
    /// Matches the SHA-256 of the canonical request body.
    RequestHash(String),
}

impl RequestMatcher {
    pub fn stage(role: AgentRole, contains: &str) -> Self {
        Self::Stage {
            role: Some(role),
            contains: contains.to_string(),
        }
    }

    fn matches(&self, role: AgentRole, hash: &str, haystack: &str) -> bool {
        match self {
            Self::Stage { role: r, contains } => {
                r.is_none_or(|r| r == role) && haystack.contains(contains.as_str())
            }
            Self::RequestHash(h) => h == hash,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    /// Behaves like an endpoint that exhausted its retries.
    Unavailable,
    Timeout,
    Malformed,
}

impl MockReply {
    pub fn text(s: &str) -> Self {
        Self::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRule {
    pub matcher: RequestMatcher,
    pub reply: MockReply,
}

impl MockRule {
    pub fn new(matcher: RequestMatcher, reply: MockReply) -> Self {
        Self { matcher, reply }
    }

    pub fn stage(role: AgentRole, contains: &str, response: &str) -> Self {
        Self::new(RequestMatcher::stage(role, contains), MockReply::text(response))
    }
}

/// On-disk script format (JSON).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub default_response: String,
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(default)]
    pub rules: Vec<MockScriptRule>,
    /// Sleep before answering each chat call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
    /// Append one line per chat call to this file, relative to the script.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// One of `unavailable`, `timeout`, `malformed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MockScriptRule {
    fn into_rule(self) -> Result<MockRule, ConfigError> {
        let matcher = match (self.request_hash, self.role) {
            (Some(h), _) => RequestMatcher::RequestHash(h),
            (None, role) => RequestMatcher::Stage {
                role: role
                    .map(|r| r.parse::<AgentRole>())
                    .transpose()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
                contains: self.contains.unwrap_or_default(),
            },
        };
        let reply = match (self.response, self.error.as_deref()) {
            (Some(text), None) => MockReply::Text(text),
            (None, Some("unavailable")) => MockReply::Unavailable,
            (None, Some("timeout")) => MockReply::Timeout,
            (None, Some("malformed")) => MockReply::Malformed,
            _ => {
                return Err(ConfigError::Invalid(
                    "mock rule needs exactly one of response or error (unavailable|timeout|malformed)".into(),
                ))
            }
        };
        Ok(MockRule { matcher, reply })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub seq: usize,
    pub role: AgentRole,
    pub request_hash: String,
    pub request: ChatRequest,
    pub reply: MockReply,
}

/// Deterministic lookup-table backend. Rules are tried in order and the
/// first match wins; unmatched requests get the default response.
pub struct MockBackend {
    rules: Vec<MockRule>,
    default_reply: MockReply,
    embedding_dim: usize,
    log: Mutex<Vec<MockCall>>,
    embed_calls: AtomicUsize,
    delay: Option<Duration>,
    call_log: Option<PathBuf>,
}

pub const DEFAULT_MOCK_EMBED_DIM: usize = 64;

impl MockBackend {
    pub fn new(rules: Vec<MockRule>, default_reply: MockReply) -> Self {
        Self {
            rules,
            default_reply,
            embedding_dim: DEFAULT_MOCK_EMBED_DIM,
            log: Mutex::new(Vec::new()),
            embed_calls: AtomicUsize::new(0),
            delay: None,
            call_log: None,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    /// Every chat call appends `seq<TAB>role<TAB>request hash<TAB>image
    /// hash` to `path`, so calls stay countable across processes.
    pub fn with_call_log(mut self, path: impl Into<PathBuf>) -> Self {
        self.call_log = Some(path.into());
        self
    }

    pub fn with_embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = dim.max(1);
        self
    }

    pub fn from_script(script: MockScript) -> Result<Self, ConfigError> {
        let rules = script
            .rules
            .into_iter()
            .map(MockScriptRule::into_rule)
            .collect::<Result<Vec<_>, _>>()?;
        let mut mock = Self::new(rules, MockReply::Text(script.default_response))
            .with_embedding_dim(script.embedding_dim.unwrap_or(DEFAULT_MOCK_EMBED_DIM));
        if let Some(ms) = script.delay_ms {
            mock = mock.with_delay(Duration::from_millis(ms));
        }
        if let Some(path) = script.call_log {
            mock = mock.with_call_log(path);
        }
        Ok(mock)
    }

    pub fn from_script_file(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut script: MockScript = serde_json::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let (Some(log), Some(dir)) = (&script.call_log, path.parent()) {
            if log.is_relative() {
                script.call_log = Some(dir.join(log));
            }
        }
        Self::from_script(script)
    }

    /// Chat calls in arrival order.
    pub fn calls(&self) -> Vec<MockCall> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("mock log poisoned").len()
    }

    pub fn clear_calls(&self) {
        self.log.lock().expect("mock log poisoned").clear();
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    fn haystack(request: &ChatRequest) -> String {
        let mut hay = request.all_text();
        if let Some(img) = request.image() {
            hay.push('\n');
            hay.push_str(&img.data_uri());
        }
        hay
    }

    /// Reply the script assigns to this request.
    pub fn lookup(&self, role: AgentRole, request: &ChatRequest) -> MockReply {
        let hash = request.hash();
        let hay = Self::haystack(request);
        self.rules
            .iter()
            .find(|r| r.matcher.matches(role, &hash, &hay))
            .map_or_else(|| self.default_reply.clone(), |r| r.reply.clone())
    }

    /// Signed feature-hashing bag of words, so texts sharing words land
    /// close together.
    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.embedding_dim];
        let words = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase);
        for word in std::iter::once("<bias>".to_string()).chain(words) {
            let digest = Sha256::digest(word.as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as usize % self.embedding_dim;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

#[async_trait]
impl Backend for MockBackend {
    async fn chat(&self, role: AgentRole, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        if let Some(d) = self.delay {
            tokio::time::sleep(d).await;
        }
        let reply = self.lookup(role, request);
        {
            let mut log = self.log.lock().expect("mock log poisoned");
            let seq = log.len();
            if let Some(path) = &self.call_log {
                let image = request
                    .image()
                    .map_or_else(|| "-".to_string(), |i| hex::encode(Sha256::digest(i.data_uri().as_bytes())));
                let line = format!("{seq}\t{role}\t{}\t{image}\n", request.hash());
                let written = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .and_then(|mut f| f.write_all(line.as_bytes()));
                if let Err(e) = written {
                    tracing::warn!(path = %path.display(), error = %e, "mock call log write failed");
                }
            }
            log.push(MockCall {
                seq,
                role,
                request_hash: request.hash(),
                request: request.clone(),
                reply: reply.clone(),
            });
        }
        match reply {
            MockReply::Text(text) => Ok(ChatResponse {
                prompt_tokens: word_count(&request.all_text()),
                completion_tokens: word_count(&text),
                text,
                latency_ms: 0,
            }),
            MockReply::Unavailable => Err(BackendError::EndpointUnavailable {
                attempts: 1,
                last_error: "scripted failure".into(),
            }),
            MockReply::Timeout => Err(BackendError::Timeout(0)),
            MockReply::Malformed => Err(BackendError::MalformedResponse("scripted".into())),
        }
    }

    async fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
        if request.inputs.is_empty() {
            return Err(BackendError::InvalidInput("no texts to embed".into()));
        }
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        Ok(EmbeddingResponse {
            vectors: request.inputs.iter().map(|t| self.embed_one(t)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::wire::{ContentPart, Message};
    use super::*;
    use std::sync::Arc;

    fn request(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            temperature: 0.0,
            max_tokens: 16,
            messages: vec![
                Message::system("sys"),
                Message::user(vec![ContentPart::Text(text.into())]),
            ],
        }
    }

    #[tokio::test]
    async fn scripted_lookup_and_default() {
        let answer = "<reasoning>x</reasoning><answer>airplane</answer>";
        let mock = MockBackend::new(
            vec![MockRule::stage(AgentRole::Reasoning, "sky", answer)],
            MockReply::text("default"),
        );
        let hit = mock.chat(AgentRole::Reasoning, &request("blue sky")).await.unwrap();
        assert_eq!(hit.text, answer);
        let wrong_role = mock.chat(AgentRole::Aspect, &request("blue sky")).await.unwrap();
        assert_eq!(wrong_role.text, "default");
        let miss = mock.chat(AgentRole::Reasoning, &request("grass")).await.unwrap();
        assert_eq!(miss.text, "default");
        assert_eq!(mock.call_count(), 3);
    }

    #[tokio::test]
    async fn request_hash_matcher() {
        let req = request("anything");
        let mock = MockBackend::new(
            vec![MockRule::new(
                RequestMatcher::RequestHash(req.hash()),
                MockReply::text("<answer>cat</answer>"),
            )],
            MockReply::text("default"),
        );
        assert_eq!(mock.chat(AgentRole::Direct, &req).await.unwrap().text, "<answer>cat</answer>");
        assert_eq!(mock.chat(AgentRole::Direct, &request("other")).await.unwrap().text, "default");
    }

    #[tokio::test]
    async fn concurrent_callers_are_all_logged() {
        let mock = Arc::new(MockBackend::new(vec![], MockReply::text("ok")));
        let handles: Vec<_> = (0..2)
            .map(|i| {
                let m = Arc::clone(&mock);
                tokio::spawn(async move { m.chat(AgentRole::Aspect, &request(&format!("caller {i}"))).await })
            })
            .collect();
        for h in handles {
            h.await.unwrap().unwrap();
        }
        let calls = mock.calls();
        assert_eq!(calls.len(), 2);
        let mut texts: Vec<String> = calls.iter().map(|c| c.request.all_text()).collect();
        texts.sort();
        assert_eq!(texts, vec!["sys\ncaller 0", "sys\ncaller 1"]);
        assert_eq!(calls.iter().map(|c| c.seq).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn script_file_parsing() {
        let script: MockScript = serde_json::from_str(
            r#"{"default_response":"d","rules":[
                {"role":"aspect","contains":"","response":"desc"},
                {"request_hash":"abc","response":"h"},
                {"role":"outliner","error":"unavailable"}]}"#,
        )
        .unwrap();
        let mock = MockBackend::from_script(script).unwrap();
        assert_eq!(mock.rules.len(), 3);
        assert_eq!(mock.rules[2].reply, MockReply::Unavailable);
        let bad: MockScript = serde_json::from_str(r#"{"rules":[{"role":"aspect"}]}"#).unwrap();
        assert!(MockBackend::from_script(bad).is_err());
    }
}
