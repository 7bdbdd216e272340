//! Run configuration, loaded from TOML and overridable field by field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{HttpSettings, RetryPolicy, DEFAULT_EMBED_BATCH};
use crate::error::ConfigError;
use crate::types::{LabelSet, Method};

fn default_method() -> Method {
    Method::Maric
}
fn default_n_aspects() -> usize {
    3
}
fn default_max_parallel() -> usize {
    4
}
fn default_seed() -> u64 {
    42
}
fn default_prompt_dir() -> PathBuf {
    PathBuf::from("prompts")
}
fn default_cache_dir() -> Option<PathBuf> {
    Some(PathBuf::from(".maric-cache"))
}
fn default_true() -> bool {
    true
}
fn default_stage_tokens() -> u32 {
    512
}
fn default_reasoning_tokens() -> u32 {
    1024
}
fn default_retries() -> u32 {
    3
}
fn default_timeout() -> u64 {
    120
}
fn default_embed_batch() -> usize {
    DEFAULT_EMBED_BATCH
}
fn default_model() -> String {
    "llava-hf/llava-1.5-13b-hf".into()
}
fn default_embed_model() -> String {
    "intfloat/e5-large-v2".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Directory holding the CIFAR-10 binary batches.
    Cifar10,
    /// `root/<class>/<image>` layout.
    Folder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub kind: DatasetKind,
    pub root: PathBuf,
    /// Images per class; `None` takes every image.
    #[serde(default)]
    pub per_class: Option<usize>,
    /// Pinned manifest; when present it replaces sampling.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Custom label set; builtin sets are used for the benchmark ids.
    #[serde(default)]
    pub labels: Option<Vec<LabelSpec>>,
    /// Required manifest size, checked after loading.
    #[serde(default)]
    pub expected_total: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPaths {
    pub outliner: Option<PathBuf>,
    pub aspect: Option<PathBuf>,
    pub reasoning: Option<PathBuf>,
    pub direct: Option<PathBuf>,
    pub cot: Option<PathBuf>,
    pub savr: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset_id: String,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_n_aspects")]
    pub n_aspects: usize,
    #[serde(default)]
    pub endpoints: Vec<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_prompt_dir")]
    pub prompt_dir: PathBuf,
    #[serde(default)]
    pub prompts: PromptPaths,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub include_image_in_reasoning: bool,
    #[serde(default = "default_stage_tokens")]
    pub max_tokens_stage: u32,
    #[serde(default = "default_reasoning_tokens")]
    pub max_tokens_reasoning: u32,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Cap on concurrent requests per endpoint; defaults to twice `max_parallel`.
    #[serde(default)]
    pub max_in_flight: Option<usize>,
    #[serde(default = "default_embed_model")]
    pub embed_model: String,
    #[serde(default = "default_embed_batch")]
    pub embed_batch: usize,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetSource>,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config deserializes")
    }
}

impl RunConfig {
    pub fn from_toml_str(raw: &str) -> Result<Self, ConfigError> {
        toml::from_str(raw).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<inline>"),
            message: e.to_string(),
        })
    }

    /// Loads a TOML file; relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.prompt_dir);
        if let Some(c) = self.cache_dir.as_mut() {
            fix(c);
        }
        for p in [
            &mut self.prompts.outliner,
            &mut self.prompts.aspect,
            &mut self.prompts.reasoning,
            &mut self.prompts.direct,
            &mut self.prompts.cot,
            &mut self.prompts.savr,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for src in self.datasets.values_mut() {
            fix(&mut src.root);
            if let Some(m) = src.manifest.as_mut() {
                fix(m);
            }
        }
        for e in &mut self.endpoints {
            if let Some(rest) = e.strip_prefix("mock:") {
                let p = Path::new(rest);
                if p.is_relative() {
                    *e = format!("mock:{}", base.join(p).display());
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_aspects < 1 {
            return Err(ConfigError::Invalid("n_aspects must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ConfigError::Invalid("temperature must be >= 0".into()));
        }
        if self.max_parallel < 1 {
            return Err(ConfigError::Invalid("max_parallel must be >= 1".into()));
        }
        if self.embed_batch < 1 {
            return Err(ConfigError::Invalid("embed_batch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn http_settings(&self) -> HttpSettings {
        HttpSettings {
            timeout: std::time::Duration::from_secs(self.timeout_secs),
            retry: RetryPolicy {
                max_retries: self.retries,
                ..RetryPolicy::default()
            },
            max_in_flight: self.max_in_flight.unwrap_or(self.max_parallel * 2).max(1),
            ..HttpSettings::default()
        }
    }

    pub fn dataset(&self, id: &str) -> Result<&DatasetSource, ConfigError> {
        self.datasets
            .get(id)
            .ok_or_else(|| ConfigError::UnknownDataset(id.to_string()))
    }

    /// Label set for a dataset: the configured list, else the builtin one.
    pub fn label_set(&self, id: &str) -> Result<LabelSet, ConfigError> {
        let custom = self.datasets.get(id).and_then(|d| d.labels.as_ref());
        match custom {
            Some(specs) => {
                let labels = specs
                    .iter()
                    .map(|s| crate::types::ClassLabel::with_aliases(&s.name, &s.aliases))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                LabelSet::new(id, labels).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            None => LabelSet::builtin(id).ok_or_else(|| ConfigError::UnknownDataset(id.to_string())),
        }
    }
}
