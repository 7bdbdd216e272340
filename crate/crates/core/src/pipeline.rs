//! The three-stage agent pipeline.
//!
//! An outliner reads the whole image and emits `n` prefix/postfix focus
//! prompts; one aspect agent per prompt describes its slice of the image;
//! a reasoning agent critiques and reconciles those descriptions and emits a
//! tagged `<reasoning>`/`<answer>` reply. Each stage is one backend call,
//! plus at most one re-ask when the reply is unusable.

use std::sync::Arc;
use std::time::Instant;

use futures::future::join_all;
use thiserror::Error;

use crate::backend::{encode_image, Backend, BackendError, ChatRequest, ContentPart, ImageData, Message};
use crate::cache::{CacheKey, TranscriptCache};
use crate::config::RunConfig;
use crate::error::ConfigError;
use crate::parser::{match_label, parse_prompt_list, parse_tagged_output, ParseError};
use crate::prompts::{PromptSet, TemplateName, Vars};
use crate::types::{
    AgentRole, AspectDescription, AspectPrompt, CallRecord, ImageSample, LabelSet, Method, Prediction,
    Transcript,
};

const OUTLINER_REMINDER: &str = "Format reminder: reply with exactly {n} numbered lines (\"1.\", \"2.\", ...). Each line holds a prefix sentence naming what to focus on and a postfix sentence stating what to describe.";
const ASPECT_REMINDER: &str = "Your previous reply was empty. Describe the focused aspect of the image in a few sentences.";
const TAGGED_REMINDER: &str = "Format reminder: your reply must contain <reasoning>...</reasoning> followed by <answer>one class name</answer>.";
const DIRECT_REMINDER: &str = "Reply with exactly one class name from the list.";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage} stage: {source}")]
    Backend {
        stage: AgentRole,
        #[source]
        source: BackendError,
    },
    #[error("outliner reply unusable after re-ask: {0}")]
    PromptParseFailure(ParseError),
    #[error("aspect agent {0} returned an empty description after re-ask")]
    EmptyDescription(usize),
    #[error("image encoding: {0}")]
    Encode(BackendError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSettings {
    pub model: String,
    pub temperature: f64,
    pub n_aspects: usize,
    /// Token limit for outliner, aspect and direct calls.
    pub max_tokens_stage: u32,
    /// Token limit for reasoning, CoT and SAVR calls.
    pub max_tokens_reasoning: u32,
    pub include_image_in_reasoning: bool,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self::from(&RunConfig::default())
    }
}

impl From<&RunConfig> for ClassifierSettings {
    fn from(c: &RunConfig) -> Self {
        Self {
            model: c.model.clone(),
            temperature: c.temperature,
            n_aspects: c.n_aspects,
            max_tokens_stage: c.max_tokens_stage,
            max_tokens_reasoning: c.max_tokens_reasoning,
            include_image_in_reasoning: c.include_image_in_reasoning,
        }
    }
}

/// What the reasoning agent gets to read besides the image.
#[derive(Debug, Clone, Copy)]
pub enum ReasoningEvidence<'a> {
    Descriptions(&'a [AspectDescription]),
    /// Ablation: the outliner's prompts without any descriptions.
    Aspects(&'a [AspectPrompt]),
}

impl ReasoningEvidence<'_> {
    fn render(&self) -> String {
        match self {
            ReasoningEvidence::Descriptions(ds) if ds.is_empty() => {
                "No aspect descriptions are available for this image.".to_string()
            }
            ReasoningEvidence::Descriptions(ds) => {
                let blocks: Vec<String> = ds
                    .iter()
                    .map(|d| format!("[Aspect {}] {}\n{}", d.agent_index, d.prompt.render(), d.text))
                    .collect();
                format!("Aspect descriptions:\n\n{}", blocks.join("\n\n"))
            }
            ReasoningEvidence::Aspects(ps) => {
                let lines: Vec<String> = ps.iter().map(|p| format!("{}. {}", p.index, p.render())).collect();
                format!(
                    "Aspects to consider (no descriptions are available; examine these aspects in the image yourself):\n{}",
                    lines.join("\n")
                )
            }
        }
    }
}

/// Running tally for one stage across its attempts.
struct StageTally {
    role: AgentRole,
    started: Instant,
    prompt_tokens: u64,
    completion_tokens: u64,
    attempts: u32,
}

impl StageTally {
    fn new(role: AgentRole) -> Self {
        Self {
            role,
            started: Instant::now(),
            prompt_tokens: 0,
            completion_tokens: 0,
            attempts: 0,
        }
    }

    fn finish(self, request_hash: String, response_text: String) -> CallRecord {
        CallRecord {
            role: self.role,
            request_hash,
            response_text,
            latency_ms: self.started.elapsed().as_millis() as u64,
            prompt_tokens: self.prompt_tokens,
            completion_tokens: self.completion_tokens,
            retries: self.attempts.saturating_sub(1),
        }
    }
}

/// Runs any classification method against one backend.
pub struct Classifier {
    backend: Arc<dyn Backend>,
    prompts: Arc<PromptSet>,
    settings: ClassifierSettings,
    cache: Option<TranscriptCache>,
}

impl Classifier {
    pub fn new(backend: Arc<dyn Backend>, prompts: Arc<PromptSet>, settings: ClassifierSettings) -> Self {
        Self {
            backend,
            prompts,
            settings,
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: TranscriptCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn settings(&self) -> &ClassifierSettings {
        &self.settings
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    fn build_request(&self, max_tokens: u32, system: &str, user: &str, image: Option<&ImageData>) -> ChatRequest {
        let mut content = Vec::new();
        if let Some(img) = image {
            content.push(ContentPart::Image(img.clone()));
        }
        if !user.is_empty() {
            content.push(ContentPart::Text(user.to_string()));
        }
        ChatRequest {
            model: self.settings.model.clone(),
            temperature: self.settings.temperature,
            max_tokens,
            messages: vec![Message::system(system), Message::user(content)],
        }
    }

    /// One attempt of a stage; returns the reply text and the request hash.
    async fn attempt(
        &self,
        tally: &mut StageTally,
        max_tokens: u32,
        system: &str,
        user: &str,
        image: Option<&ImageData>,
    ) -> Result<(String, String), PipelineError> {
        let request = self.build_request(max_tokens, system, user, image);
        let hash = request.hash();
        tally.attempts += 1;
        let resp = self
            .backend
            .chat(tally.role, &request)
            .await
            .map_err(|source| PipelineError::Backend {
                stage: tally.role,
                source,
            })?;
        tally.prompt_tokens += resp.prompt_tokens;
        tally.completion_tokens += resp.completion_tokens;
        Ok((resp.text, hash))
    }

    /// Asks the outliner for exactly `n` focus prompts.
    pub async fn run_outliner(
        &self,
        image: &ImageData,
        n: usize,
    ) -> Result<(Vec<AspectPrompt>, CallRecord), PipelineError> {
        let rendered = self.prompts.render(TemplateName::Outliner, &Vars { n: Some(n), ..Vars::default() })?;
        let mut tally = StageTally::new(AgentRole::Outliner);
        let max = self.settings.max_tokens_stage;
        let (text, hash) = self.attempt(&mut tally, max, &rendered.system, &rendered.user, Some(image)).await?;
        if let Ok(prompts) = parse_prompt_list(&text, n) {
            return Ok((prompts, tally.finish(hash, text)));
        }
        let reminder = OUTLINER_REMINDER.replace("{n}", &n.to_string());
        let user = join_reminder(&rendered.user, &reminder);
        let (text, hash) = self.attempt(&mut tally, max, &rendered.system, &user, Some(image)).await?;
        match parse_prompt_list(&text, n) {
            Ok(prompts) => Ok((prompts, tally.finish(hash, text))),
            Err(e) => Err(PipelineError::PromptParseFailure(e)),
        }
    }

    /// One aspect agent: describes the image under a single focus prompt.
    pub async fn run_aspect(
        &self,
        image: &ImageData,
        prompt: &AspectPrompt,
    ) -> Result<(AspectDescription, CallRecord), PipelineError> {
        let rendered_prompt = prompt.render();
        let rendered = self.prompts.render(
            TemplateName::Aspect,
            &Vars {
                prompt: Some(&rendered_prompt),
                ..Vars::default()
            },
        )?;
        let mut tally = StageTally::new(AgentRole::Aspect);
        let max = self.settings.max_tokens_stage;
        let (mut text, mut hash) = self.attempt(&mut tally, max, &rendered.system, &rendered.user, Some(image)).await?;
        if text.trim().is_empty() {
            let user = join_reminder(&rendered.user, ASPECT_REMINDER);
            (text, hash) = self.attempt(&mut tally, max, &rendered.system, &user, Some(image)).await?;
        }
        let description = AspectDescription::new(prompt.clone(), &text)
            .map_err(|_| PipelineError::EmptyDescription(prompt.index))?;
        Ok((description, tally.finish(hash, text)))
    }

    /// Reflective reasoning over the evidence; always yields a prediction,
    /// possibly UNKNOWN.
    pub async fn run_reasoning(
        &self,
        image: &ImageData,
        evidence: ReasoningEvidence<'_>,
        labels: &LabelSet,
    ) -> Result<(Prediction, CallRecord), PipelineError> {
        let class_list = labels.class_list();
        let evidence_text = evidence.render();
        let rendered = self.prompts.render(
            TemplateName::Reasoning,
            &Vars {
                class_list: Some(&class_list),
                descriptions: Some(&evidence_text),
                ..Vars::default()
            },
        )?;
        let image = self.settings.include_image_in_reasoning.then_some(image);
        self.tagged_stage(AgentRole::Reasoning, &rendered.system, &rendered.user, image, labels)
            .await
    }

    /// Sends a prompt that requires the tagged reply format, re-asks once on
    /// a missing answer tag, then falls back to matching the raw reply.
    pub(crate) async fn tagged_stage(
        &self,
        role: AgentRole,
        system: &str,
        user: &str,
        image: Option<&ImageData>,
        labels: &LabelSet,
    ) -> Result<(Prediction, CallRecord), PipelineError> {
        let mut tally = StageTally::new(role);
        let max = self.settings.max_tokens_reasoning;
        let (mut text, mut hash) = self.attempt(&mut tally, max, system, user, image).await?;
        let mut parsed = parse_tagged_output(&text);
        if parsed.is_err() {
            let user = join_reminder(user, TAGGED_REMINDER);
            (text, hash) = self.attempt(&mut tally, max, system, &user, image).await?;
            parsed = parse_tagged_output(&text);
        }
        let prediction = match parsed {
            Ok((reasoning, answer)) => predict(&reasoning, &answer, labels),
            Err(_) => {
                let raw = text.trim();
                predict(raw, raw, labels)
            }
        };
        Ok((prediction, tally.finish(hash, text)))
    }

    /// Direct baseline stage: the whole reply is matched as the answer.
    pub(crate) async fn direct_stage(
        &self,
        system: &str,
        user: &str,
        image: &ImageData,
        labels: &LabelSet,
    ) -> Result<(Prediction, CallRecord), PipelineError> {
        let mut tally = StageTally::new(AgentRole::Direct);
        let max = self.settings.max_tokens_stage;
        let (mut text, mut hash) = self.attempt(&mut tally, max, system, user, Some(image)).await?;
        if text.trim().is_empty() {
            let user = join_reminder(user, DIRECT_REMINDER);
            (text, hash) = self.attempt(&mut tally, max, system, &user, Some(image)).await?;
        }
        let prediction = predict("", text.trim(), labels);
        Ok((prediction, tally.finish(hash, text)))
    }

    /// Full pipeline: outliner, `n` concurrent aspect agents, reasoning.
    pub async fn classify_maric(&self, sample: &ImageSample, labels: &LabelSet) -> Transcript {
        let mut t = TranscriptDraft::new(sample, Method::Maric, &self.settings.model);
        let result: Result<Prediction, PipelineError> = async {
            let image = encode_image(sample).map_err(PipelineError::Encode)?;
            let (prompts, call) = self.run_outliner(&image, self.settings.n_aspects).await?;
            t.calls.push(call);
            t.prompts = prompts;
            let outcomes = join_all(t.prompts.iter().map(|p| self.run_aspect(&image, p))).await;
            let mut first_err = None;
            for outcome in outcomes {
                match outcome {
                    Ok((d, call)) => {
                        t.descriptions.push(d);
                        t.calls.push(call);
                    }
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
            let (prediction, call) = self
                .run_reasoning(&image, ReasoningEvidence::Descriptions(&t.descriptions), labels)
                .await?;
            t.calls.push(call);
            Ok(prediction)
        }
        .await;
        t.finish(result)
    }

    /// Ablation without aspect agents: the outliner's prompts go straight to
    /// the reasoning agent.
    pub async fn classify_maric_no_aspects(&self, sample: &ImageSample, labels: &LabelSet) -> Transcript {
        let mut t = TranscriptDraft::new(sample, Method::MaricNoAspects, &self.settings.model);
        let result: Result<Prediction, PipelineError> = async {
            let image = encode_image(sample).map_err(PipelineError::Encode)?;
            let (prompts, call) = self.run_outliner(&image, self.settings.n_aspects).await?;
            t.calls.push(call);
            t.prompts = prompts;
            let (prediction, call) = self
                .run_reasoning(&image, ReasoningEvidence::Aspects(&t.prompts), labels)
                .await?;
            t.calls.push(call);
            Ok(prediction)
        }
        .await;
        t.finish(result)
    }

    pub fn cache_key(&self, method: Method, sample: &ImageSample, labels: &LabelSet) -> CacheKey {
        CacheKey::new(
            method,
            &self.settings.model,
            &self.prompts.hash_for(method),
            &sample.byte_hash,
            self.settings.n_aspects,
            labels.names(),
            self.settings.temperature,
            self.settings.include_image_in_reasoning,
        )
    }

    /// Runs `method` on a sample, serving completed samples from the cache.
    /// Failed transcripts are never cached.
    pub async fn classify(&self, method: Method, sample: &ImageSample, labels: &LabelSet) -> Transcript {
        let key = self.cache.as_ref().map(|_| self.cache_key(method, sample, labels));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.get(key) {
                return rebind(hit, sample);
            }
        }
        let transcript = match method {
            Method::Maric => self.classify_maric(sample, labels).await,
            Method::MaricNoAspects => self.classify_maric_no_aspects(sample, labels).await,
            Method::Direct => self.classify_direct(sample, labels).await,
            Method::Cot => self.classify_cot(sample, labels).await,
            Method::Savr => self.classify_savr(sample, labels).await,
        };
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if !transcript.failed() {
                if let Err(e) = cache.put(key, &transcript) {
                    tracing::warn!(sample = %sample.sample_id, error = %e, "cache write failed");
                }
            }
        }
        transcript
    }
}

fn join_reminder(user: &str, reminder: &str) -> String {
    if user.is_empty() {
        reminder.to_string()
    } else {
        format!("{user}\n\n{reminder}")
    }
}

fn predict(reasoning: &str, answer: &str, labels: &LabelSet) -> Prediction {
    let (label, method) = match_label(answer, labels);
    Prediction {
        reasoning: reasoning.to_string(),
        raw_answer: answer.to_string(),
        matched_label: label.map(|l| l.name().to_string()),
        match_method: method,
    }
}

/// A cached transcript may come from another sample with identical bytes.
fn rebind(mut t: Transcript, sample: &ImageSample) -> Transcript {
    t.sample_id = sample.sample_id.clone();
    t.dataset_id = sample.dataset_id.clone();
    t.true_label = sample.true_label.clone();
    t.correct = t.prediction.matched_label.as_deref() == Some(sample.true_label.as_str());
    t
}

/// Transcript under construction; stages append as they complete.
pub(crate) struct TranscriptDraft {
    sample_id: String,
    dataset_id: String,
    true_label: String,
    method: Method,
    model: String,
    pub(crate) prompts: Vec<AspectPrompt>,
    pub(crate) descriptions: Vec<AspectDescription>,
    pub(crate) calls: Vec<CallRecord>,
}

impl TranscriptDraft {
    pub(crate) fn new(sample: &ImageSample, method: Method, model: &str) -> Self {
        Self {
            sample_id: sample.sample_id.clone(),
            dataset_id: sample.dataset_id.clone(),
            true_label: sample.true_label.clone(),
            method,
            model: model.to_string(),
            prompts: Vec::new(),
            descriptions: Vec::new(),
            calls: Vec::new(),
        }
    }

    pub(crate) fn finish(self, result: Result<Prediction, PipelineError>) -> Transcript {
        let (prediction, error) = match result {
            Ok(p) => (p, None),
            Err(e) => (Prediction::unknown("", ""), Some(e.to_string())),
        };
        let correct = error.is_none() && prediction.matched_label.as_deref() == Some(self.true_label.as_str());
        Transcript {
            sample_id: self.sample_id,
            dataset_id: self.dataset_id,
            method: self.method,
            model: self.model,
            true_label: self.true_label,
            prompts: self.prompts,
            descriptions: self.descriptions,
            prediction,
            calls: self.calls,
            correct,
            error,
        }
    }
}
