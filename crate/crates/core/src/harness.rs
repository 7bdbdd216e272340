//! Experiment runner, metrics, persistence and report tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Backend;
use crate::cache::TranscriptCache;
use crate::config::RunConfig;
use crate::datasets::{write_manifest, DatasetError, DatasetManifest};
use crate::error::ConfigError;
use crate::pipeline::{Classifier, ClassifierSettings};
use crate::prompts::PromptSet;
use crate::types::{ImageSample, LabelSet, MatchMethod, Method, Transcript};

pub const TRANSCRIPT_LOG: &str = "transcripts.log";
pub const RESULT_SUMMARY: &str = "result.summary";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const UNKNOWN_COLUMN: &str = "UNKNOWN";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("dataset mismatch: {full} vs {ablated}")]
    DatasetMismatch { full: String, ablated: String },
    #[error("model mismatch: {full} vs {ablated}")]
    ModelMismatch { full: String, ablated: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The configuration fields that can change a result. Parallelism,
/// endpoints and timeouts are left out so runs that differ only in those
/// compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub dataset_id: String,
    pub method: Method,
    pub model: String,
    pub n_aspects: usize,
    pub temperature: f64,
    pub seed: u64,
    pub include_image_in_reasoning: bool,
    pub template_hash: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub true_label: String,
    pub predicted: Option<String>,
    pub match_method: MatchMethod,
    pub correct: bool,
    pub failed: bool,
}

impl SampleRecord {
    pub fn from_transcript(t: &Transcript) -> Self {
        Self {
            sample_id: t.sample_id.clone(),
            true_label: t.true_label.clone(),
            predicted: t.prediction.matched_label.clone(),
            match_method: t.prediction.match_method,
            correct: t.correct && !t.failed(),
            failed: t.failed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: String,
    pub correct: usize,
    pub total: usize,
    /// `None` when the class has no samples.
    pub accuracy: Option<f64>,
}

/// Rows follow label-set order; columns are the labels plus a trailing
/// UNKNOWN column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn get(&self, truth: &str, predicted: Option<&str>) -> usize {
        let Some(row) = self.labels.iter().position(|l| l == truth) else {
            return 0;
        };
        let col = match predicted {
            Some(p) => match self.labels.iter().position(|l| l == p) {
                Some(c) => c,
                None => return 0,
            },
            None => self.labels.len(),
        };
        self.counts[row][col]
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> usize {
        self.row_sums().iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in self.labels.iter().map(String::as_str).chain([UNKNOWN_COLUMN]) {
            out.push(',');
            out.push_str(&csv_field(l));
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(&csv_field(label));
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn compute_confusion(records: &[SampleRecord], labels: &LabelSet) -> ConfusionMatrix {
    let n = labels.len();
    let mut counts = vec![vec![0; n + 1]; n];
    for r in records {
        let Some(row) = labels.index_of(&r.true_label) else {
            continue;
        };
        let col = r
            .predicted
            .as_deref()
            .and_then(|p| labels.index_of(p))
            .unwrap_or(n);
        counts[row][col] += 1;
    }
    ConfusionMatrix {
        labels: labels.names().iter().map(|s| s.to_string()).collect(),
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ConfigSnapshot,
    pub records: Vec<SampleRecord>,
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub confusion: ConfusionMatrix,
    pub match_histogram: BTreeMap<String, usize>,
    pub failed: usize,
    pub total_tokens: u64,
    pub wall_time_ms: u64,
}

impl RunResult {
    /// Reduces transcripts into metrics. `labels` fixes the class order.
    pub fn from_transcripts(config: ConfigSnapshot, labels: &LabelSet, transcripts: &[Transcript], wall_time_ms: u64) -> Self {
        let records: Vec<SampleRecord> = transcripts.iter().map(SampleRecord::from_transcript).collect();
        let total_tokens = transcripts.iter().map(Transcript::total_tokens).sum();
        Self::from_records(config, labels, records, total_tokens, wall_time_ms)
    }

    pub fn from_records(
        config: ConfigSnapshot,
        labels: &LabelSet,
        records: Vec<SampleRecord>,
        total_tokens: u64,
        wall_time_ms: u64,
    ) -> Self {
        let correct = records.iter().filter(|r| r.correct).count();
        let accuracy = if records.is_empty() {
            0.0
        } else {
            100.0 * correct as f64 / records.len() as f64
        };
        let per_class = labels
            .names()
            .into_iter()
            .map(|label| {
                let mine: Vec<&SampleRecord> = records.iter().filter(|r| r.true_label == label).collect();
                let correct = mine.iter().filter(|r| r.correct).count();
                ClassAccuracy {
                    label: label.to_string(),
                    correct,
                    total: mine.len(),
                    accuracy: (!mine.is_empty()).then(|| 100.0 * correct as f64 / mine.len() as f64),
                }
            })
            .collect();
        let mut match_histogram: BTreeMap<String, usize> =
            MatchMethod::ALL.iter().map(|m| (m.as_str().to_string(), 0)).collect();
        for r in &records {
            *match_histogram.entry(r.match_method.as_str().to_string()).or_default() += 1;
        }
        let confusion = compute_confusion(&records, labels);
        let failed = records.iter().filter(|r| r.failed).count();
        Self {
            config,
            records,
            accuracy,
            per_class,
            confusion,
            match_histogram,
            failed,
            total_tokens,
            wall_time_ms,
        }
    }

    pub fn without_timings(&self) -> Self {
        Self {
            wall_time_ms: 0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&raw).map_err(|e| HarnessError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads `result.summary` from a run directory, or the file itself.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        if path.is_dir() {
            Self::read(&path.join(RESULT_SUMMARY))
        } else {
            Self::read(path)
        }
    }
}

/// Reads a transcript log. The last record for a sample wins; an
/// unterminated, unparseable final line (an interrupted append) is skipped.
pub fn read_transcript_log(path: &Path) -> Result<Vec<Transcript>, HarnessError> {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let lines: Vec<String> = std::io::BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    let raw = std::fs::read(path).map_err(io_err(path))?;
    let terminated = raw.last().is_none_or(|b| *b == b'\n');
    let mut order: Vec<String> = Vec::new();
    let mut latest: HashMap<String, Transcript> = HashMap::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Transcript>(line) {
            Ok(t) => {
                if !latest.contains_key(&t.sample_id) {
                    order.push(t.sample_id.clone());
                }
                latest.insert(t.sample_id.clone(), t);
            }
            Err(_) if i + 1 == lines.len() && !terminated => {
                tracing::warn!(path = %path.display(), "skipping truncated final transcript line");
            }
            Err(e) => {
                return Err(HarnessError::Corrupt {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(order.into_iter().filter_map(|id| latest.remove(&id)).collect())
}

/// Cuts an interrupted final append off the log, so new records start on
/// a fresh line.
fn repair_log_tail(path: &Path) -> Result<(), HarnessError> {
    let raw = match std::fs::read(path) {
        Ok(r) => r,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_err(path)(e)),
    };
    if raw.last().is_none_or(|b| *b == b'\n') {
        return Ok(());
    }
    let keep = raw.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    tracing::warn!(path = %path.display(), dropped = raw.len() - keep, "truncating torn transcript line");
    let file = std::fs::OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    file.set_len(keep as u64).map_err(io_err(path))
}

/// Loads the configured templates, falling back to the built-in set when
/// the prompt directory does not exist and no overrides are given.
pub fn resolve_prompts(config: &RunConfig) -> Result<PromptSet, ConfigError> {
    let o = &config.prompts;
    let no_overrides = [&o.outliner, &o.aspect, &o.reasoning, &o.direct, &o.cot, &o.savr]
        .iter()
        .all(|p| p.is_none());
    if !config.prompt_dir.is_dir() && no_overrides {
        tracing::info!(dir = %config.prompt_dir.display(), "prompt directory absent, using built-in templates");
        return Ok(PromptSet::builtin());
    }
    PromptSet::load(config.method, &config.prompt_dir, o)
}

/// Where a run writes its artifacts. Without an output directory nothing
/// is persisted and nothing is resumed.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
}

impl RunOutput {
    pub fn to_dir(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }
}

fn snapshot(config: &RunConfig, prompts: &PromptSet, labels: &LabelSet) -> ConfigSnapshot {
    ConfigSnapshot {
        dataset_id: config.dataset_id.clone(),
        method: config.method,
        model: config.model.clone(),
        n_aspects: config.n_aspects,
        temperature: config.temperature,
        seed: config.seed,
        include_image_in_reasoning: config.include_image_in_reasoning,
        template_hash: prompts.hash_for(config.method),
        labels: labels.names().iter().map(|s| s.to_string()).collect(),
    }
}

/// A logged transcript can stand in for a fresh one when it succeeded under
/// the same method, model and sample.
fn reusable(t: &Transcript, config: &RunConfig, sample: &ImageSample) -> bool {
    !t.failed()
        && t.method == config.method
        && t.model == config.model
        && t.dataset_id == sample.dataset_id
        && t.true_label == sample.true_label
        && (t.method != Method::Maric || t.prompts.len() == config.n_aspects)
}

/// Classifies every sample with bounded parallelism, appending each
/// transcript to the log as it completes. Samples already completed in the
/// log, or present in the transcript cache, cost no backend calls.
pub async fn run_experiment(
    config: &RunConfig,
    manifest: &DatasetManifest,
    samples: &[ImageSample],
    backend: Arc<dyn Backend>,
    output: &RunOutput,
) -> Result<RunResult, HarnessError> {
    config.validate()?;
    if manifest.is_empty() || samples.is_empty() {
        return Err(ConfigError::Invalid(format!("dataset {} has no samples", manifest.dataset_id)).into());
    }
    if samples.len() != manifest.len() {
        return Err(ConfigError::Invalid(format!(
            "{} samples loaded for a manifest of {}",
            samples.len(),
            manifest.len()
        ))
        .into());
    }
    let labels = &manifest.label_set;
    let prompts = Arc::new(resolve_prompts(config)?);
    let snapshot = snapshot(config, &prompts, labels);
    let started = Instant::now();

    let mut done: HashMap<String, Transcript> = HashMap::new();
    let log_path = output.dir.as_ref().map(|d| d.join(TRANSCRIPT_LOG));
    if let Some(dir) = &output.dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_manifest(&dir.join(MANIFEST_FILE), manifest)?;
        let log_path = log_path.as_deref().expect("log path set with dir");
        let by_id: HashMap<&str, &ImageSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
        let logged = read_transcript_log(log_path)?;
        repair_log_tail(log_path)?;
        for t in logged {
            if by_id.get(t.sample_id.as_str()).is_some_and(|s| reusable(&t, config, s)) {
                done.insert(t.sample_id.clone(), t);
            }
        }
        if !done.is_empty() {
            tracing::info!(resumed = done.len(), total = samples.len(), "resuming from transcript log");
        }
    }

    let mut classifier = Classifier::new(backend, prompts, ClassifierSettings::from(config));
    if let Some(dir) = &config.cache_dir {
        let cache = TranscriptCache::new(dir).map_err(io_err(dir))?;
        classifier = classifier.with_cache(cache);
    }

    let (tx, mut rx) = tokio::sync::mpsc::channel::<Transcript>(64);
    let writer = {
        let log_path = log_path.clone();
        tokio::spawn(async move {
            let mut file = match &log_path {
                Some(p) => Some(
                    std::fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(p)
                        .map_err(io_err(p))?,
                ),
                None => None,
            };
            let mut fresh = Vec::new();
            while let Some(t) = rx.recv().await {
                if let (Some(f), Some(p)) = (file.as_mut(), &log_path) {
                    let mut line = serde_json::to_string(&t).expect("transcript serializes");
                    line.push('\n');
                    f.write_all(line.as_bytes()).map_err(io_err(p))?;
                    f.flush().map_err(io_err(p))?;
                }
                fresh.push(t);
            }
            Ok::<_, HarnessError>(fresh)
        })
    };

    let pending: Vec<&ImageSample> = samples.iter().filter(|s| !done.contains_key(&s.sample_id)).collect();
    let total = samples.len();
    let mut completed = done.len();
    let classifier = &classifier;
    let mut stream = futures::stream::iter(pending)
        .map(|s| classifier.classify(config.method, s, labels))
        .buffer_unordered(config.max_parallel.max(1));
    while let Some(t) = stream.next().await {
        completed += 1;
        tracing::debug!(sample = %t.sample_id, correct = t.correct, completed, total, "sample finished");
        if let Some(e) = &t.error {
            tracing::warn!(sample = %t.sample_id, error = %e, "sample failed");
        }
        if tx.send(t).await.is_err() {
            break;
        }
    }
    drop(stream);
    drop(tx);
    let fresh = writer.await.expect("transcript writer panicked")?;
    for t in fresh {
        done.insert(t.sample_id.clone(), t);
    }

    let ordered: Vec<Transcript> = samples
        .iter()
        .map(|s| done.remove(&s.sample_id).expect("every sample classified"))
        .collect();
    let result = RunResult::from_transcripts(snapshot, labels, &ordered, started.elapsed().as_millis() as u64);

    if let Some(dir) = &output.dir {
        let summary = dir.join(RESULT_SUMMARY);
        std::fs::write(&summary, result.to_json()).map_err(io_err(&summary))?;
        let confusion = dir.join(CONFUSION_CSV);
        std::fs::write(&confusion, result.confusion.to_csv()).map_err(io_err(&confusion))?;
    }
    Ok(result)
}

/// Accuracy recomputed from a transcript log alone.
pub fn accuracy_from_log(path: &Path) -> Result<f64, HarnessError> {
    let transcripts = read_transcript_log(path)?;
    if transcripts.is_empty() {
        return Ok(0.0);
    }
    let correct = transcripts.iter().filter(|t| t.correct && !t.failed()).count();
    Ok(100.0 * correct as f64 / transcripts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            other => Err(ConfigError::Invalid(format!("unknown report format {other:?}"))),
        }
    }
}

/// Canonical column order for the benchmark datasets; other datasets follow
/// alphabetically.
const DATASET_ORDER: [&str; 4] = ["cifar10", "ood-cv", "weather", "skin-cancer"];
/// Baselines first, as in the results tables.
const METHOD_ORDER: [Method; 5] = [Method::Direct, Method::Cot, Method::Savr, Method::MaricNoAspects, Method::Maric];

fn dataset_title(id: &str) -> &str {
    match id {
        "cifar10" => "CIFAR-10",
        "ood-cv" => "OOD-CV",
        "weather" => "Weather",
        "skin-cancer" => "Skin Cancer",
        other => other,
    }
}

fn one_decimal(x: f64) -> String {
    format!("{x:.1}")
}

/// One model block of a report: rows are methods, columns datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub datasets: Vec<String>,
    pub blocks: Vec<ReportBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBlock {
    pub model: String,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    /// One cell per dataset column; `None` when that run is missing.
    pub cells: Vec<Option<f64>>,
    pub best: Vec<bool>,
}

/// Groups results by model, then marks the best method per dataset within
/// each model. Values are compared as printed, so ties at one decimal are
/// all marked.
pub fn build_report(results: &[RunResult]) -> ReportTable {
    let mut datasets: Vec<String> = Vec::new();
    for r in results {
        if !datasets.contains(&r.config.dataset_id) {
            datasets.push(r.config.dataset_id.clone());
        }
    }
    datasets.sort_by_key(|d| {
        (
            DATASET_ORDER.iter().position(|x| x == d).unwrap_or(DATASET_ORDER.len()),
            d.clone(),
        )
    });
    let mut models: Vec<String> = Vec::new();
    for r in results {
        if !models.contains(&r.config.model) {
            models.push(r.config.model.clone());
        }
    }
    let blocks = models
        .into_iter()
        .map(|model| {
            let mut rows: Vec<ReportRow> = METHOD_ORDER
                .iter()
                .filter_map(|&method| {
                    let cells: Vec<Option<f64>> = datasets
                        .iter()
                        .map(|d| {
                            // A later result for the same cell replaces an earlier one.
                            results
                                .iter()
                                .rev()
                                .find(|r| r.config.model == model && r.config.method == method && &r.config.dataset_id == d)
                                .map(|r| r.accuracy)
                        })
                        .collect();
                    cells.iter().any(Option::is_some).then(|| ReportRow {
                        method,
                        best: vec![false; cells.len()],
                        cells,
                    })
                })
                .collect();
            for col in 0..datasets.len() {
                let best = rows
                    .iter()
                    .filter_map(|r| r.cells[col])
                    .map(one_decimal)
                    .max_by(|a, b| a.parse::<f64>().unwrap_or(0.0).total_cmp(&b.parse::<f64>().unwrap_or(0.0)));
                if let Some(best) = best {
                    for row in &mut rows {
                        row.best[col] = row.cells[col].is_some_and(|v| one_decimal(v) == best);
                    }
                }
            }
            ReportBlock { model, rows }
        })
        .collect();
    ReportTable { datasets, blocks }
}

pub fn render_report(table: &ReportTable, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            let _ = write!(out, "| Model | Method |");
            for d in &table.datasets {
                let _ = write!(out, " {} |", dataset_title(d));
            }
            out.push_str("\n|---|---|");
            for _ in &table.datasets {
                out.push_str("---:|");
            }
            out.push('\n');
            for block in &table.blocks {
                for row in &block.rows {
                    let _ = write!(out, "| {} | {} |", block.model, row.method.display_name());
                    for (cell, best) in row.cells.iter().zip(&row.best) {
                        match (cell, best) {
                            (Some(v), true) => {
                                let _ = write!(out, " **{}** |", one_decimal(*v));
                            }
                            (Some(v), false) => {
                                let _ = write!(out, " {} |", one_decimal(*v));
                            }
                            (None, _) => out.push_str(" - |"),
                        }
                    }
                    out.push('\n');
                }
            }
        }
        ReportFormat::Csv => {
            out.push_str("model,method");
            for d in &table.datasets {
                let _ = write!(out, ",{},{}_best", csv_field(d), csv_field(d));
            }
            out.push('\n');
            for block in &table.blocks {
                for row in &block.rows {
                    let _ = write!(out, "{},{}", csv_field(&block.model), row.method.as_str());
                    for (cell, best) in row.cells.iter().zip(&row.best) {
                        match cell {
                            Some(v) => {
                                let _ = write!(out, ",{},{}", one_decimal(*v), best);
                            }
                            None => out.push_str(",,false"),
                        }
                    }
                    out.push('\n');
                }
            }
        }
    }
    out
}

pub fn emit_report(results: &[RunResult], format: ReportFormat) -> String {
    render_report(&build_report(results), format)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub label: String,
    pub full: Option<f64>,
    pub ablated: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDiff {
    pub dataset_id: String,
    pub model: String,
    pub full_method: Method,
    pub ablated_method: Method,
    pub full_accuracy: f64,
    pub ablated_accuracy: f64,
    /// Full minus ablated, in percentage points.
    pub delta: f64,
    pub per_class: Vec<ClassDelta>,
}

pub fn diff_ablation(full: &RunResult, ablated: &RunResult) -> Result<AblationDiff, HarnessError> {
    if full.config.dataset_id != ablated.config.dataset_id {
        return Err(HarnessError::DatasetMismatch {
            full: full.config.dataset_id.clone(),
            ablated: ablated.config.dataset_id.clone(),
        });
    }
    if full.config.model != ablated.config.model {
        return Err(HarnessError::ModelMismatch {
            full: full.config.model.clone(),
            ablated: ablated.config.model.clone(),
        });
    }
    let per_class = full
        .per_class
        .iter()
        .map(|f| {
            let a = ablated.per_class.iter().find(|a| a.label == f.label).and_then(|a| a.accuracy);
            ClassDelta {
                label: f.label.clone(),
                full: f.accuracy,
                ablated: a,
                delta: f.accuracy.zip(a).map(|(f, a)| f - a),
            }
        })
        .collect();
    Ok(AblationDiff {
        dataset_id: full.config.dataset_id.clone(),
        model: full.config.model.clone(),
        full_method: full.config.method,
        ablated_method: ablated.config.method,
        full_accuracy: full.accuracy,
        ablated_accuracy: ablated.accuracy,
        delta: full.accuracy - ablated.accuracy,
        per_class,
    })
}

fn signed(x: f64) -> String {
    let s = one_decimal(x);
    if s.starts_with('-') || s == "0.0" {
        s
    } else {
        format!("+{s}")
    }
}

/// Dataset rows with ablated, full and delta columns, then per-class deltas.
pub fn render_ablation(diffs: &[AblationDiff], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            out.push_str("| Dataset | Ablated | Full | Delta |\n|---|---:|---:|---:|\n");
            for d in diffs {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    dataset_title(&d.dataset_id),
                    one_decimal(d.ablated_accuracy),
                    one_decimal(d.full_accuracy),
                    signed(d.delta)
                );
            }
            for d in diffs {
                let _ = write!(
                    out,
                    "\n{} per class ({} vs {}):\n\n| Class | Ablated | Full | Delta |\n|---|---:|---:|---:|\n",
                    dataset_title(&d.dataset_id),
                    d.full_method.display_name(),
                    d.ablated_method.display_name()
                );
                for c in &d.per_class {
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} | {} |",
                        c.label,
                        c.ablated.map_or("-".into(), one_decimal),
                        c.full.map_or("-".into(), one_decimal),
                        c.delta.map_or("-".into(), signed)
                    );
                }
            }
        }
        ReportFormat::Csv => {
            out.push_str("dataset,class,ablated,full,delta\n");
            for d in diffs {
                let _ = writeln!(
                    out,
                    "{},,{},{},{}",
                    csv_field(&d.dataset_id),
                    one_decimal(d.ablated_accuracy),
                    one_decimal(d.full_accuracy),
                    signed(d.delta)
                );
                for c in &d.per_class {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        csv_field(&d.dataset_id),
                        csv_field(&c.label),
                        c.ablated.map_or(String::new(), one_decimal),
                        c.full.map_or(String::new(), one_decimal),
                        c.delta.map_or(String::new(), signed)
                    );
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(dataset: &str, method: Method, model: &str) -> ConfigSnapshot {
        ConfigSnapshot {
            dataset_id: dataset.into(),
            method,
            model: model.into(),
            n_aspects: 3,
            temperature: 0.0,
            seed: 42,
            include_image_in_reasoning: true,
            template_hash: String::new(),
            labels: vec![],
        }
    }

    fn rec(truth: &str, pred: Option<&str>) -> SampleRecord {
        SampleRecord {
            sample_id: format!("{truth}-{pred:?}-{}", rand_id()),
            true_label: truth.into(),
            predicted: pred.map(String::from),
            match_method: if pred.is_some() { MatchMethod::Exact } else { MatchMethod::None },
            correct: pred == Some(truth),
            failed: false,
        }
    }

    fn rand_id() -> u64 {
        use std::sync::atomic::{AtomicU64, Ordering};
        static N: AtomicU64 = AtomicU64::new(0);
        N.fetch_add(1, Ordering::Relaxed)
    }

    fn catdog() -> LabelSet {
        LabelSet::from_names("pets", &[("cat", &[]), ("dog", &[])]).unwrap()
    }

    #[test]
    fn confusion_examples() {
        let labels = catdog();
        let mut records: Vec<SampleRecord> = (0..9).map(|_| rec("cat", Some("cat"))).collect();
        records.push(rec("cat", Some("dog")));
        let m = compute_confusion(&records, &labels);
        assert_eq!(m.get("cat", Some("dog")), 1);
        assert_eq!(m.get("cat", Some("cat")), 9);
        assert_eq!(m.row_sums(), vec![10, 0]);

        records.push(rec("dog", None));
        let m = compute_confusion(&records, &labels);
        assert_eq!(m.get("dog", None), 1);
        assert_eq!(m.trace(), 9);
        assert!(m.to_csv().starts_with("true\\predicted,cat,dog,UNKNOWN\n"));
    }

    #[test]
    fn all_unknown_scores_zero() {
        let labels = catdog();
        let records: Vec<SampleRecord> = (0..4).map(|i| rec(if i % 2 == 0 { "cat" } else { "dog" }, None)).collect();
        let r = RunResult::from_records(snap("pets", Method::Maric, "m"), &labels, records, 0, 0);
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.match_histogram["NONE"], 4);
        assert_eq!(r.match_histogram["EXACT"], 0);
        assert_eq!(r.match_histogram.values().sum::<usize>(), 4);
    }

    #[test]
    fn nine_of_ten_is_ninety() {
        let labels = catdog();
        let mut records: Vec<SampleRecord> = (0..9).map(|_| rec("dog", Some("dog"))).collect();
        records.push(rec("dog", Some("cat")));
        let r = RunResult::from_records(snap("pets", Method::Maric, "m"), &labels, records, 0, 0);
        assert_eq!(r.accuracy, 90.0);
        assert_eq!(r.per_class[1].accuracy, Some(90.0));
        assert_eq!(r.per_class[0].accuracy, None);
    }

    fn with_accuracy(dataset: &str, method: Method, model: &str, acc_tenths: usize) -> RunResult {
        let labels = catdog();
        let records = (0..1000)
            .map(|i| rec("cat", Some(if i < acc_tenths { "cat" } else { "dog" })))
            .collect();
        RunResult::from_records(snap(dataset, method, model), &labels, records, 0, 0)
    }

    #[test]
    fn single_result_is_best_and_ties_share() {
        let one = [with_accuracy("cifar10", Method::Maric, "m", 900)];
        let md = emit_report(&one, ReportFormat::Markdown);
        assert!(md.contains("| m | MARIC | **90.0** |"), "{md}");

        let tie = [
            with_accuracy("cifar10", Method::Maric, "m", 900),
            with_accuracy("cifar10", Method::Savr, "m", 900),
            with_accuracy("cifar10", Method::Direct, "m", 800),
        ];
        let csv = emit_report(&tie, ReportFormat::Csv);
        assert!(csv.contains("m,savr,90.0,true"), "{csv}");
        assert!(csv.contains("m,maric,90.0,true"), "{csv}");
        assert!(csv.contains("m,direct,80.0,false"), "{csv}");
    }

    #[test]
    fn best_is_per_model_block() {
        let rs = [
            with_accuracy("cifar10", Method::Maric, "big", 900),
            with_accuracy("cifar10", Method::Direct, "small", 500),
            with_accuracy("cifar10", Method::Maric, "small", 400),
        ];
        let t = build_report(&rs);
        assert_eq!(t.blocks.len(), 2);
        assert_eq!(t.blocks[1].rows[0].method, Method::Direct);
        assert!(t.blocks[1].rows[0].best[0]);
        assert!(!t.blocks[1].rows[1].best[0]);
    }

    #[test]
    fn ablation_delta_and_mismatch() {
        let full = with_accuracy("cifar10", Method::Maric, "m", 935);
        let ablated = with_accuracy("cifar10", Method::MaricNoAspects, "m", 934);
        let d = diff_ablation(&full, &ablated).unwrap();
        assert_eq!(signed(d.delta), "+0.1");
        assert!(render_ablation(&[d], ReportFormat::Markdown).contains("| CIFAR-10 | 93.4 | 93.5 | +0.1 |"));

        let same = diff_ablation(&full, &full).unwrap();
        assert_eq!(same.delta, 0.0);
        assert!(same.per_class.iter().all(|c| c.delta.is_none_or(|d| d == 0.0)));

        let other = with_accuracy("weather", Method::MaricNoAspects, "m", 934);
        assert!(matches!(diff_ablation(&full, &other), Err(HarnessError::DatasetMismatch { .. })));
    }

    #[test]
    fn truncated_log_tail_is_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TRANSCRIPT_LOG);
        std::fs::write(&path, "{\"sample_id\":").unwrap();
        assert!(read_transcript_log(&path).unwrap().is_empty());
        std::fs::write(&path, "garbage\n{}\n").unwrap();
        assert!(matches!(read_transcript_log(&path), Err(HarnessError::Corrupt { .. })));
        assert!(read_transcript_log(&dir.path().join("missing")).unwrap().is_empty());
    }
}
