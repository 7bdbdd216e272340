//! Content-addressed transcript cache: one JSON file per completed sample.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::types::{sha256_hex, Method, Transcript};

#[derive(Serialize)]
struct KeyParts<'a> {
    method: Method,
    model: &'a str,
    template_hash: &'a str,
    byte_hash: &'a str,
    n_aspects: usize,
    labels: Vec<&'a str>,
    temperature: f64,
    include_image_in_reasoning: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(pub String);

impl CacheKey {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: Method,
        model: &str,
        template_hash: &str,
        byte_hash: &str,
        n_aspects: usize,
        labels: Vec<&str>,
        temperature: f64,
        include_image_in_reasoning: bool,
    ) -> Self {
        let parts = KeyParts {
            method,
            model,
            template_hash,
            byte_hash,
            n_aspects,
            labels,
            temperature,
            include_image_in_reasoning,
        };
        Self(sha256_hex(
            serde_json::to_string(&parts).expect("key serializes").as_bytes(),
        ))
    }
}

#[derive(Debug, Clone)]
pub struct TranscriptCache {
    dir: PathBuf,
}

impl TranscriptCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.0))
    }

    /// Unreadable or corrupt entries count as misses.
    pub fn get(&self, key: &CacheKey) -> Option<Transcript> {
        let raw = std::fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&raw).ok()
    }

    /// Writes through a temporary file and rename, so readers never see a
    /// partial entry.
    pub fn put(&self, key: &CacheKey, transcript: &Transcript) -> std::io::Result<()> {
        let final_path = self.path(key);
        static SEQ: AtomicU64 = AtomicU64::new(0);
        let seq = SEQ.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(format!(".{}.{}.{seq}.tmp", key.0, std::process::id()));
        let body = serde_json::to_string(transcript).expect("transcript serializes");
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, final_path)
    }

    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|it| {
                it.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
