use std::path::Path;

use maric_core::backend::{embed_texts, Backend};
use maric_core::harness::read_transcript_log;
use maric_core::Transcript;

use crate::error::AtlasError;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedTrace {
    pub sample_id: String,
    pub label: String,
    pub reasoning: String,
    pub vector: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceCorpus {
    pub traces: Vec<EmbeddedTrace>,
    /// Samples dropped because their reasoning was empty.
    pub skipped: usize,
}

/// One trace per sample with non-empty reasoning. Callers pass transcripts
/// already deduplicated by sample.
pub fn traces_from_transcripts(transcripts: &[Transcript]) -> Result<TraceCorpus, AtlasError> {
    let mut traces = Vec::new();
    let mut skipped = 0;
    for t in transcripts {
        let reasoning = t.prediction.reasoning.trim();
        if reasoning.is_empty() {
            skipped += 1;
            continue;
        }
        traces.push(EmbeddedTrace {
            sample_id: t.sample_id.clone(),
            label: t.true_label.clone(),
            reasoning: reasoning.to_string(),
            vector: None,
        });
    }
    if traces.is_empty() {
        return Err(AtlasError::EmptyCorpus);
    }
    Ok(TraceCorpus { traces, skipped })
}

/// Reads a transcript log; for a resumed run the last record per sample wins.
pub fn extract_traces(transcript_log: &Path) -> Result<TraceCorpus, AtlasError> {
    let transcripts = read_transcript_log(transcript_log)?;
    traces_from_transcripts(&transcripts)
}

/// Embeds every trace's reasoning and checks the vectors share one finite
/// dimension.
pub async fn embed_traces(
    backend: &dyn Backend,
    model: &str,
    corpus: &mut TraceCorpus,
    batch: usize,
) -> Result<(), AtlasError> {
    let texts: Vec<String> = corpus.traces.iter().map(|t| t.reasoning.clone()).collect();
    let vectors = embed_texts(backend, model, &texts, batch).await?;
    check_vectors(&vectors)?;
    for (t, v) in corpus.traces.iter_mut().zip(vectors) {
        t.vector = Some(v);
    }
    Ok(())
}

pub fn check_vectors(vectors: &[Vec<f64>]) -> Result<usize, AtlasError> {
    let d = vectors.first().ok_or(AtlasError::EmptyCorpus)?.len();
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(AtlasError::DimensionMismatch {
                index: i,
                expected: d,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(AtlasError::NonFinite(i));
        }
    }
    Ok(d)
}
