//! OpenAI-compatible chat-completions and embeddings wire shapes.

use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::types::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageData {
    pub media_type: String,
    /// Standard base64 payload without the `data:` prefix.
    pub base64: String,
}

impl ImageData {
    pub fn data_uri(&self) -> String {
        format!("data:{};base64,{}", self.media_type, self.base64)
    }

    pub fn from_data_uri(uri: &str) -> Option<Self> {
        let rest = uri.strip_prefix("data:")?;
        let (media_type, payload) = rest.split_once(";base64,")?;
        Some(Self {
            media_type: media_type.to_string(),
            base64: payload.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    Image(ImageData),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: MessageRole,
    pub content: Vec<ContentPart>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: vec![ContentPart::Text(text.into())],
        }
    }

    pub fn user(content: Vec<ContentPart>) -> Self {
        Self {
            role: MessageRole::User,
            content,
        }
    }

    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<Message>,
}

// Serialization goes through these mirror types so the body matches the
// OpenAI schema exactly: system content as a plain string, user content as
// a list of typed parts.

#[derive(Serialize, Deserialize)]
struct WireRequest {
    model: String,
    temperature: f64,
    max_tokens: u32,
    messages: Vec<WireMessage>,
}

#[derive(Serialize, Deserialize)]
struct WireMessage {
    role: MessageRole,
    content: WireContent,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireContent {
    Text(String),
    Parts(Vec<WirePart>),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart {
    Text { text: String },
    ImageUrl { image_url: WireImageUrl },
}

#[derive(Serialize, Deserialize)]
struct WireImageUrl {
    url: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        let systems = self
            .messages
            .iter()
            .filter(|m| m.role == MessageRole::System)
            .count();
        if systems != 1 || self.messages.first().map(|m| m.role) != Some(MessageRole::System) {
            return Err(BackendError::InvalidInput(
                "request needs exactly one system message, first".into(),
            ));
        }
        let images = self
            .messages
            .iter()
            .flat_map(|m| &m.content)
            .filter(|p| matches!(p, ContentPart::Image(_)))
            .count();
        if images > 1 {
            return Err(BackendError::InvalidInput(format!(
                "request carries {images} images, at most 1 allowed"
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidInput("temperature must be >= 0".into()));
        }
        Ok(())
    }

    /// Canonical JSON body sent to `/v1/chat/completions`.
    pub fn to_json(&self) -> String {
        let wire = WireRequest {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            messages: self
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role,
                    content: match m.role {
                        MessageRole::System => WireContent::Text(m.text()),
                        MessageRole::User => WireContent::Parts(
                            m.content
                                .iter()
                                .map(|p| match p {
                                    ContentPart::Text(text) => WirePart::Text { text: text.clone() },
                                    ContentPart::Image(img) => WirePart::ImageUrl {
                                        image_url: WireImageUrl { url: img.data_uri() },
                                    },
                                })
                                .collect(),
                        ),
                    },
                })
                .collect(),
        };
        serde_json::to_string(&wire).expect("request serializes")
    }

    pub fn from_json(body: &str) -> Result<Self, BackendError> {
        let wire: WireRequest = serde_json::from_str(body)
            .map_err(|e| BackendError::MalformedResponse(format!("request body: {e}")))?;
        let messages = wire
            .messages
            .into_iter()
            .map(|m| {
                let content = match m.content {
                    WireContent::Text(t) => vec![ContentPart::Text(t)],
                    WireContent::Parts(parts) => parts
                        .into_iter()
                        .map(|p| match p {
                            WirePart::Text { text } => Ok(ContentPart::Text(text)),
                            WirePart::ImageUrl { image_url } => ImageData::from_data_uri(&image_url.url)
                                .map(ContentPart::Image)
                                .ok_or_else(|| {
                                    BackendError::MalformedResponse("image_url is not a base64 data URI".into())
                                }),
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                };
                Ok(Message { role: m.role, content })
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        Ok(Self {
            model: wire.model,
            temperature: wire.temperature,
            max_tokens: wire.max_tokens,
            messages,
        })
    }

    /// SHA-256 of the canonical body.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    /// All text parts of all messages, joined by newlines.
    pub fn all_text(&self) -> String {
        self.messages
            .iter()
            .map(Message::text)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image(&self) -> Option<&ImageData> {
        self.messages.iter().flat_map(|m| &m.content).find_map(|p| match p {
            ContentPart::Image(img) => Some(img),
            ContentPart::Text(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

#[derive(Deserialize)]
struct WireChatResponse {
    choices: Option<Vec<WireChoice>>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: Option<WireReply>,
}

#[derive(Deserialize)]
struct WireReply {
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatResponse {
    /// Parses a chat-completions reply body, keeping the first choice.
    pub fn from_json(body: &str, latency_ms: u64) -> Result<Self, BackendError> {
        let wire: WireChatResponse = serde_json::from_str(body)
            .map_err(|e| BackendError::MalformedResponse(format!("chat reply: {e}")))?;
        let text = wire
            .choices
            .and_then(|c| c.into_iter().next())
            .and_then(|c| c.message)
            .and_then(|m| m.content)
            .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))?;
        let usage = wire.usage.unwrap_or_default();
        Ok(Self {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            latency_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub model: String,
    #[serde(rename = "input")]
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingResponse {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct WireEmbeddingResponse {
    data: Vec<WireEmbedding>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

impl EmbeddingResponse {
    pub fn from_json(body: &str, expected: usize) -> Result<Self, BackendError> {
        let mut wire: WireEmbeddingResponse = serde_json::from_str(body)
            .map_err(|e| BackendError::MalformedResponse(format!("embedding reply: {e}")))?;
        if wire.data.iter().all(|d| d.index.is_some()) {
            wire.data.sort_by_key(|d| d.index);
        }
        let vectors: Vec<Vec<f64>> = wire.data.into_iter().map(|d| d.embedding).collect();
        if vectors.len() != expected {
            return Err(BackendError::MalformedResponse(format!(
                "{} embeddings for {expected} inputs",
                vectors.len()
            )));
        }
        Ok(Self { vectors })
    }
}
