//! Human rating study over generated aspects: sampling study items from
//! MARIC transcripts, a persistent ratings store, Likert statistics and the
//! HTTP API raters use.

mod select;
mod server;
mod stats;
mod store;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use select::{build_study, eligible, select_items, ASPECTS_PER_ITEM};
pub use server::{router, serve_study, spawn_study};
pub use stats::{summarize, summary_csv, CriterionSummary, StudySummary};
pub use store::{rater_order, StudyStore, ITEMS_FILE, IMAGES_DIR, RATINGS_LOG};

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 5;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("need {requested} MARIC transcripts with {ASPECTS_PER_ITEM} descriptions, found {eligible}")]
    InsufficientTranscripts { eligible: usize, requested: usize },
    #[error("no image for sample {0:?}")]
    MissingImage(String),
    #[error("study store {0} already holds a study")]
    StoreExists(PathBuf),
    #[error("no study at {0}; run `maric study build` first")]
    NotBuilt(PathBuf),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("invalid rating: {0}")]
    InvalidRating(String),
    #[error("corrupt study file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Harness(#[from] maric_core::harness::HarnessError),
    #[error(transparent)]
    Backend(#[from] maric_core::backend::BackendError),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> StudyError + '_ {
    move |source| StudyError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemAspect {
    pub index: usize,
    pub prompt: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyItem {
    pub item_id: String,
    pub sample_id: String,
    pub dataset_id: String,
    /// File name under the store's images directory.
    pub image_file: String,
    pub media_type: String,
    pub aspects: Vec<ItemAspect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub seed: u64,
    pub items: Vec<StudyItem>,
}

/// One rater's three Likert scores for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub rater_id: String,
    pub item_id: String,
    pub relevance: u8,
    pub diversity: u8,
    pub accuracy: u8,
    /// Unix milliseconds at acceptance.
    pub timestamp: u64,
}

impl Rating {
    pub fn validate(&self) -> Result<(), StudyError> {
        if self.rater_id.trim().is_empty() {
            return Err(StudyError::InvalidRating("rater_id is empty".into()));
        }
        for (name, v) in [
            ("relevance", self.relevance),
            ("diversity", self.diversity),
            ("accuracy", self.accuracy),
        ] {
            if !(MIN_SCORE..=MAX_SCORE).contains(&v) {
                return Err(StudyError::InvalidRating(format!(
                    "{name} must be an integer in {MIN_SCORE}..={MAX_SCORE}, got {v}"
                )));
            }
        }
        Ok(())
    }
}
