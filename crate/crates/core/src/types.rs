//! Domain types shared by every stage of the classifier.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CoreError;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn trim_punct(s: &str) -> &str {
    s.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Lowercases, drops the articles `a`/`an`/`the`, collapses whitespace and
/// strips punctuation from both ends.
pub fn normalize_label_token(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let kept: Vec<&str> = lowered
        .split_whitespace()
        .filter(|tok| !ARTICLES.contains(&trim_punct(tok)))
        .collect();
    trim_punct(&kept.join(" ")).to_string()
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable content digest used as the image cache key.
pub fn hash_image(pixels: &Pixels) -> String {
    match pixels {
        Pixels::Raster(r) => {
            let mut h = Sha256::new();
            h.update(b"raster:");
            h.update(r.width.to_le_bytes());
            h.update(r.height.to_le_bytes());
            h.update(&r.data[..]);
            hex::encode(h.finalize())
        }
        Pixels::Encoded { bytes, .. } => sha256_hex(bytes),
    }
}

/// Reads an encoded image from disk and hashes its bytes.
pub fn hash_image_file(path: &Path) -> Result<String, CoreError> {
    let bytes = std::fs::read(path).map_err(|source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    canonical_name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    aliases: Vec<String>,
}

impl ClassLabel {
    pub fn new(name: &str) -> Result<Self, CoreError> {
        Self::with_aliases(name, &[] as &[&str])
    }

    pub fn with_aliases<S: AsRef<str>>(name: &str, aliases: &[S]) -> Result<Self, CoreError> {
        let canonical = name.trim();
        if canonical.is_empty() || canonical != canonical.to_lowercase() {
            return Err(CoreError::InvalidLabel(name.to_string()));
        }
        let aliases = aliases
            .iter()
            .map(|a| a.as_ref().trim().to_string())
            .filter(|a| !a.is_empty())
            .collect();
        Ok(Self {
            canonical_name: canonical.to_string(),
            aliases,
        })
    }

    pub fn name(&self) -> &str {
        &self.canonical_name
    }

    pub fn aliases(&self) -> &[String] {
        &self.aliases
    }

    /// Canonical name followed by aliases, all normalized.
    pub fn normalized_forms(&self) -> Vec<String> {
        std::iter::once(self.canonical_name.as_str())
            .chain(self.aliases.iter().map(String::as_str))
            .map(normalize_label_token)
            .filter(|s| !s.is_empty())
            .collect()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_name)
    }
}

/// Ordered class list of one dataset. The order defines confusion-matrix axes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelSet {
    dataset_id: String,
    labels: Vec<ClassLabel>,
}

impl LabelSet {
    pub fn new(dataset_id: &str, labels: Vec<ClassLabel>) -> Result<Self, CoreError> {
        if labels.len() < 2 {
            return Err(CoreError::TooFewLabels(labels.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for label in &labels {
            for form in label.normalized_forms() {
                if !seen.insert(form.clone()) {
                    return Err(CoreError::DuplicateLabel(form));
                }
            }
        }
        Ok(Self {
            dataset_id: dataset_id.to_string(),
            labels,
        })
    }

    /// Builds a label set from `(name, aliases)` pairs.
    pub fn from_names(dataset_id: &str, names: &[(&str, &[&str])]) -> Result<Self, CoreError> {
        let labels = names
            .iter()
            .map(|(n, a)| ClassLabel::with_aliases(n, a))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dataset_id, labels)
    }

    pub fn cifar10() -> Self {
        Self::from_names(
            "cifar10",
            &[
                ("airplane", &["aeroplane", "plane"]),
                ("automobile", &["car"]),
                ("bird", &[]),
                ("cat", &[]),
                ("deer", &[]),
                ("dog", &[]),
                ("frog", &[]),
                ("horse", &[]),
                ("ship", &[]),
                ("truck", &[]),
            ],
        )
        .expect("builtin label set")
    }

    pub fn ood_cv() -> Self {
        Self::from_names(
            "ood-cv",
            &[
                ("aeroplane", &["airplane", "plane"]),
                ("bicycle", &["bike"]),
                ("boat", &[]),
                ("bus", &[]),
                ("car", &[]),
                ("chair", &[]),
                ("diningtable", &["dining table", "table"]),
                ("motorbike", &["motorcycle"]),
                ("sofa", &["couch"]),
                ("train", &[]),
            ],
        )
        .expect("builtin label set")
    }

    pub fn weather() -> Self {
        Self::from_names(
            "weather",
            &[
                ("sunrise", &[]),
                ("shine", &["sunny", "sunshine"]),
                ("rain", &["rainy"]),
                ("cloudy", &["clouds"]),
            ],
        )
        .expect("builtin label set")
    }

    pub fn skin_cancer() -> Self {
        Self::from_names(
            "skin-cancer",
            &[
                ("healthy", &["benign"]),
                ("cancerous", &["melanoma", "malignant"]),
            ],
        )
        .expect("builtin label set")
    }

    /// Builtin label set for one of the four benchmark ids.
    pub fn builtin(dataset_id: &str) -> Option<Self> {
        match dataset_id {
            "cifar10" | "cifar-10" => Some(Self::cifar10()),
            "ood-cv" | "oodcv" => Some(Self::ood_cv()),
            "weather" => Some(Self::weather()),
            "skin-cancer" | "skin_cancer" | "skincancer" => Some(Self::skin_cancer()),
            _ => None,
        }
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.labels.iter().map(ClassLabel::name).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name() == name)
    }

    pub fn get(&self, name: &str) -> Option<&ClassLabel> {
        self.labels.iter().find(|l| l.name() == name)
    }

    /// Comma-separated class names as they appear in prompts.
    pub fn class_list(&self) -> String {
        self.names().join(", ")
    }
}

#[derive(Deserialize)]
struct LabelSetRepr {
    dataset_id: String,
    labels: Vec<ClassLabel>,
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = LabelSetRepr::deserialize(d)?;
        LabelSet::new(&repr.dataset_id, repr.labels).map_err(serde::de::Error::custom)
    }
}

/// 8-bit interleaved RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    pub width: u32,
    pub height: u32,
    pub data: Arc<[u8]>,
}

impl RgbRaster {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, CoreError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(CoreError::RasterSize {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: data.into(),
        })
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pixels {
    Raster(RgbRaster),
    /// Encoded file contents as read from disk.
    Encoded { path: PathBuf, bytes: Arc<[u8]> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSample {
    pub sample_id: String,
    pub dataset_id: String,
    pub true_label: String,
    pub pixels: Pixels,
    pub byte_hash: String,
}

impl ImageSample {
    pub fn from_raster(
        sample_id: &str,
        labels: &LabelSet,
        true_label: &str,
        raster: RgbRaster,
    ) -> Result<Self, CoreError> {
        Self::build(sample_id, labels, true_label, Pixels::Raster(raster))
    }

    pub fn from_file(
        sample_id: &str,
        labels: &LabelSet,
        true_label: &str,
        path: &Path,
    ) -> Result<Self, CoreError> {
        let bytes = std::fs::read(path).map_err(|source| CoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::build(
            sample_id,
            labels,
            true_label,
            Pixels::Encoded {
                path: path.to_path_buf(),
                bytes: bytes.into(),
            },
        )
    }

    fn build(
        sample_id: &str,
        labels: &LabelSet,
        true_label: &str,
        pixels: Pixels,
    ) -> Result<Self, CoreError> {
        if labels.index_of(true_label).is_none() {
            return Err(CoreError::UnknownLabel {
                label: true_label.to_string(),
                dataset_id: labels.dataset_id().to_string(),
            });
        }
        let byte_hash = hash_image(&pixels);
        Ok(Self {
            sample_id: sample_id.to_string(),
            dataset_id: labels.dataset_id().to_string(),
            true_label: true_label.to_string(),
            pixels,
            byte_hash,
        })
    }
}

/// One focus prompt emitted by the outliner: a region/attribute prefix and a
/// descriptive-goal postfix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectPrompt {
    pub index: usize,
    pub prefix: String,
    pub postfix: String,
}

impl AspectPrompt {
    pub fn new(index: usize, prefix: &str, postfix: &str) -> Result<Self, CoreError> {
        let (prefix, postfix) = (prefix.trim(), postfix.trim());
        if prefix.is_empty() || postfix.is_empty() || index == 0 {
            return Err(CoreError::InvalidPrompt(index));
        }
        Ok(Self {
            index,
            prefix: prefix.to_string(),
            postfix: postfix.to_string(),
        })
    }

    pub fn render(&self) -> String {
        format!("{} {}", self.prefix, self.postfix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectDescription {
    pub prompt: AspectPrompt,
    pub text: String,
    pub agent_index: usize,
}

impl AspectDescription {
    pub fn new(prompt: AspectPrompt, text: &str) -> Result<Self, CoreError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(CoreError::EmptyDescription(prompt.index));
        }
        Ok(Self {
            agent_index: prompt.index,
            prompt,
            text: text.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchMethod {
    Exact,
    Normalized,
    Substring,
    None,
}

impl MatchMethod {
    pub const ALL: [MatchMethod; 4] = [
        MatchMethod::Exact,
        MatchMethod::Normalized,
        MatchMethod::Substring,
        MatchMethod::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MatchMethod::Exact => "EXACT",
            MatchMethod::Normalized => "NORMALIZED",
            MatchMethod::Substring => "SUBSTRING",
            MatchMethod::None => "NONE",
        }
    }
}

/// Final decision of a classifier. `matched_label` is `None` for UNKNOWN,
/// which happens exactly when `match_method` is `NONE`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub reasoning: String,
    pub raw_answer: String,
    pub matched_label: Option<String>,
    pub match_method: MatchMethod,
}

impl Prediction {
    pub fn unknown(reasoning: &str, raw_answer: &str) -> Self {
        Self {
            reasoning: reasoning.to_string(),
            raw_answer: raw_answer.to_string(),
            matched_label: None,
            match_method: MatchMethod::None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.matched_label.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Maric,
    MaricNoAspects,
    Direct,
    Cot,
    Savr,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Maric,
        Method::MaricNoAspects,
        Method::Direct,
        Method::Cot,
        Method::Savr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Maric => "maric",
            Method::MaricNoAspects => "maric_no_aspects",
            Method::Direct => "direct",
            Method::Cot => "cot",
            Method::Savr => "savr",
        }
    }

    /// Human-readable name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Maric => "MARIC",
            Method::MaricNoAspects => "MARIC w/o Aspect Agents",
            Method::Direct => "Direct Generation",
            Method::Cot => "Chain-of-Thought (CoT)",
            Method::Savr => "SAVR",
        }
    }

    /// Number of backend stages a successful classification records.
    pub fn expected_calls(self, n_aspects: usize) -> usize {
        match self {
            Method::Maric => n_aspects + 2,
            Method::MaricNoAspects => 2,
            Method::Direct | Method::Cot | Method::Savr => 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "maric" => Ok(Method::Maric),
            "maric_no_aspects" | "no_aspects" | "ablation" => Ok(Method::MaricNoAspects),
            "direct" => Ok(Method::Direct),
            "cot" => Ok(Method::Cot),
            "savr" => Ok(Method::Savr),
            _ => Err(CoreError::UnknownMethod(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Outliner,
    Aspect,
    Reasoning,
    Direct,
    Cot,
    Savr,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Outliner => "outliner",
            AgentRole::Aspect => "aspect",
            AgentRole::Reasoning => "reasoning",
            AgentRole::Direct => "direct",
            AgentRole::Cot => "cot",
            AgentRole::Savr => "savr",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "outliner" => Ok(AgentRole::Outliner),
            "aspect" => Ok(AgentRole::Aspect),
            "reasoning" => Ok(AgentRole::Reasoning),
            "direct" => Ok(AgentRole::Direct),
            "cot" => Ok(AgentRole::Cot),
            "savr" => Ok(AgentRole::Savr),
            _ => Err(CoreError::UnknownRole(s.to_string())),
        }
    }
}

/// One pipeline stage's exchange with the backend. Re-ask retries are folded
/// into the stage: `retries` counts them and the last attempt is recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: AgentRole,
    pub request_hash: String,
    pub response_text: String,
    pub latency_ms: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default)]
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub sample_id: String,
    pub dataset_id: String,
    pub method: Method,
    pub model: String,
    pub true_label: String,
    pub prompts: Vec<AspectPrompt>,
    pub descriptions: Vec<AspectDescription>,
    pub prediction: Prediction,
    pub calls: Vec<CallRecord>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Transcript {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn total_tokens(&self) -> u64 {
        self.calls
            .iter()
            .map(|c| c.prompt_tokens + c.completion_tokens)
            .sum()
    }

    /// Copy with latencies zeroed, for comparisons that ignore timing.
    pub fn without_timings(&self) -> Self {
        let mut t = self.clone();
        for c in &mut t.calls {
            c.latency_ms = 0;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_label_token("Cat."), "cat");
        assert_eq!(normalize_label_token("  The Airplane "), "airplane");
        assert_eq!(normalize_label_token("diningtable"), "diningtable");
        assert_eq!(normalize_label_token(""), "");
        assert_eq!(normalize_label_token("an   old\ttruck!"), "old truck");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_label_token(&s);
            prop_assert_eq!(normalize_label_token(&once), once.clone());
        }

        #[test]
        fn normalize_idempotent_with_articles(words in prop::collection::vec("(a|an|the|The|A|-|\\.|cat|dog,|\\(x\\))", 0..8)) {
            let s = words.join(" ");
            let once = normalize_label_token(&s);
            prop_assert_eq!(normalize_label_token(&once), once);
        }
    }

    #[test]
    fn hash_is_deterministic_and_sensitive() {
        let a = RgbRaster::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let b = RgbRaster::new(2, 1, vec![1, 2, 3, 4, 5, 7]).unwrap();
        let ha = hash_image(&Pixels::Raster(a.clone()));
        assert_eq!(ha, hash_image(&Pixels::Raster(a)));
        assert_ne!(ha, hash_image(&Pixels::Raster(b)));
        let empty = Pixels::Encoded {
            path: PathBuf::from("x"),
            bytes: Arc::from(Vec::new()),
        };
        assert_eq!(
            hash_image(&empty),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn hash_missing_file_reports_path() {
        let err = hash_image_file(Path::new("/nonexistent/img.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/img.png"));
    }

    #[test]
    fn label_set_rejects_duplicates() {
        let dup = LabelSet::from_names("x", &[("cat", &[]), ("Cat ", &[])]);
        assert!(dup.is_err());
        let alias_clash = LabelSet::from_names("x", &[("cat", &["kitty"]), ("dog", &["kitty"])]);
        assert!(matches!(alias_clash, Err(CoreError::DuplicateLabel(_))));
        assert!(LabelSet::from_names("x", &[("cat", &[])]).is_err());
        assert!(ClassLabel::new("Cat").is_err());
        assert!(ClassLabel::new("  ").is_err());
    }

    #[test]
    fn builtin_sets_are_valid() {
        assert_eq!(LabelSet::cifar10().len(), 10);
        assert_eq!(LabelSet::ood_cv().len(), 10);
        assert_eq!(LabelSet::weather().len(), 4);
        assert_eq!(LabelSet::skin_cancer().len(), 2);
        assert_eq!(LabelSet::ood_cv().index_of("diningtable"), Some(6));
    }

    #[test]
    fn sample_requires_known_label() {
        let raster = RgbRaster::new(1, 1, vec![0, 0, 0]).unwrap();
        let err = ImageSample::from_raster("s", &LabelSet::cifar10(), "unicorn", raster);
        assert!(matches!(err, Err(CoreError::UnknownLabel { .. })));
    }

    #[test]
    fn call_count_formula() {
        for n in 1..=5 {
            assert_eq!(Method::Maric.expected_calls(n), n + 2);
            assert_eq!(Method::MaricNoAspects.expected_calls(n), 2);
            for m in [Method::Direct, Method::Cot, Method::Savr] {
                assert_eq!(m.expected_calls(n), 1);
            }
        }
    }

    #[test]
    fn method_round_trips_through_str() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn aspect_prompt_validation() {
        assert!(AspectPrompt::new(1, "Focus.", "").is_err());
        let p = AspectPrompt::new(2, "Focus on X.", "Describe Y.").unwrap();
        assert_eq!(p.render(), "Focus on X. Describe Y.");
        assert!(AspectDescription::new(p, "   ").is_err());
    }
}
