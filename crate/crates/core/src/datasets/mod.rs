//! Benchmark ingestion, seeded stratified sampling and manifests.

mod cifar;
mod folder;
mod manifest;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use self::cifar::{decode_cifar_batch, encode_cifar_record, load_cifar10, CifarRecord, CIFAR_RECORD_LEN, CIFAR_TEST_BATCH};
pub use self::folder::{load_image_folder, Sampling};
pub use self::manifest::{read_manifest, read_manifest_checked, write_manifest};

use crate::config::{DatasetKind, DatasetSource};
use crate::error::CoreError;
use crate::types::{ImageSample, LabelSet};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: size {len} is not a multiple of {CIFAR_RECORD_LEN}-byte records")]
    BadRecordLength { path: PathBuf, len: usize },
    #[error("record {record}: label byte {byte} is not a CIFAR-10 class (0-9)")]
    UnknownLabelByte { record: usize, byte: u8 },
    #[error("class {label:?} has {available} images, {requested} requested")]
    InsufficientClassCount {
        label: String,
        available: usize,
        requested: usize,
    },
    #[error("no directory for class {0:?}")]
    MissingClassDirectory(String),
    #[error("class directory for {0:?} holds no images")]
    EmptyClassDirectory(String),
    #[error("manifest line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dataset {dataset_id} has {found} samples, protocol requires {expected}")]
    SizeMismatch {
        dataset_id: String,
        expected: usize,
        found: usize,
    },
    #[error("record index {0} outside the batch file")]
    RecordOutOfRange(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryLocation {
    /// Relative to the dataset root.
    Path(PathBuf),
    /// Index into the CIFAR-10 test batch.
    Record(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub location: EntryLocation,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub label_set: LabelSet,
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if self.label_set.index_of(&e.label).is_none() {
                return Err(DatasetError::Parse {
                    line: i + 1,
                    reason: format!("label {:?} not in label set", e.label),
                });
            }
            if !ids.insert(e.sample_id.as_str()) {
                return Err(DatasetError::Parse {
                    line: i + 1,
                    reason: format!("duplicate sample id {:?}", e.sample_id),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-class entry counts in label-set order.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_set.len()];
        for e in &self.entries {
            if let Some(i) = self.label_set.index_of(&e.label) {
                counts[i] += 1;
            }
        }
        counts
    }

    pub fn check_total(&self, expected: usize) -> Result<(), DatasetError> {
        if self.entries.len() == expected {
            Ok(())
        } else {
            Err(DatasetError::SizeMismatch {
                dataset_id: self.dataset_id.clone(),
                expected,
                found: self.entries.len(),
            })
        }
    }
}

/// `per_class` distinct indices from each group, shuffled with one seeded
/// stream in group order, then sorted.
pub(crate) fn stratified_pick(
    groups: &[Vec<usize>],
    per_class: Option<usize>,
    seed: u64,
    labels: &LabelSet,
) -> Result<Vec<Vec<usize>>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups
        .iter()
        .zip(labels.labels())
        .map(|(members, label)| {
            let Some(k) = per_class else {
                return Ok(members.clone());
            };
            if members.len() < k {
                return Err(DatasetError::InsufficientClassCount {
                    label: label.name().to_string(),
                    available: members.len(),
                    requested: k,
                });
            }
            let mut pool = members.clone();
            pool.shuffle(&mut rng);
            pool.truncate(k);
            pool.sort_unstable();
            Ok(pool)
        })
        .collect()
}

/// Sample count a benchmark protocol fixes when every image is used.
pub fn protocol_total(dataset_id: &str) -> Option<usize> {
    match dataset_id {
        "weather" => Some(1125),
        "skin-cancer" => Some(174),
        _ => None,
    }
}

/// Loads the samples a manifest names. CIFAR entries read the test batch
/// under `root`; path entries resolve against `root`.
pub fn samples_from_manifest(manifest: &DatasetManifest, root: &Path) -> Result<Vec<ImageSample>, DatasetError> {
    let needs_cifar = manifest
        .entries
        .iter()
        .any(|e| matches!(e.location, EntryLocation::Record(_)));
    let records = if needs_cifar {
        let path = root.join(CIFAR_TEST_BATCH);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        decode_cifar_batch(&bytes, &path)?
    } else {
        Vec::new()
    };
    manifest
        .entries
        .iter()
        .map(|e| match &e.location {
            EntryLocation::Record(i) => {
                let rec = records.get(*i).ok_or(DatasetError::RecordOutOfRange(*i))?;
                Ok(ImageSample::from_raster(&e.sample_id, &manifest.label_set, &e.label, rec.raster.clone())?)
            }
            EntryLocation::Path(p) => Ok(ImageSample::from_file(&e.sample_id, &manifest.label_set, &e.label, &root.join(p))?),
        })
        .collect()
}

/// Result of resolving a configured dataset.
#[derive(Debug)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<ImageSample>,
    pub warnings: Vec<String>,
}

/// Loads a configured dataset: a pinned manifest if one exists, otherwise
/// fresh sampling; then enforces the protocol size when the dataset is
/// taken whole.
pub fn load_dataset(
    dataset_id: &str,
    source: &DatasetSource,
    labels: &LabelSet,
    seed: u64,
) -> Result<LoadedDataset, DatasetError> {
    let mut warnings = Vec::new();
    let manifest = match source.manifest.as_deref().filter(|p| p.exists()) {
        Some(path) => {
            let (m, warning) = read_manifest_checked(path, Some(seed))?;
            warnings.extend(warning);
            m
        }
        None => match source.kind {
            DatasetKind::Cifar10 => load_cifar10(&source.root, labels, source.per_class.unwrap_or(100), seed)?.0,
            DatasetKind::Folder => {
                let sampling = source.per_class.map_or(Sampling::All, Sampling::PerClass);
                load_image_folder(&source.root, labels, sampling, seed)?
            }
        },
    };
    let expected = source
        .expected_total
        .or_else(|| source.per_class.is_none().then(|| protocol_total(dataset_id)).flatten());
    if let Some(expected) = expected {
        manifest.check_total(expected)?;
    }
    let samples = samples_from_manifest(&manifest, &source.root)?;
    Ok(LoadedDataset {
        manifest,
        samples,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn stratified_pick_is_exact_and_distinct(sizes in prop::collection::vec(5usize..40, 2..6), k in 0usize..5, seed in any::<u64>()) {
            let names: Vec<String> = (0..sizes.len()).map(|i| format!("c{i}")).collect();
            let pairs: Vec<(&str, &[&str])> = names.iter().map(|n| (n.as_str(), &[][..])).collect();
            let labels = LabelSet::from_names("t", &pairs).unwrap();
            let mut next = 0;
            let groups: Vec<Vec<usize>> = sizes.iter().map(|&s| { let g = (next..next + s).collect(); next += s; g }).collect();
            let picked = stratified_pick(&groups, Some(k), seed, &labels).unwrap();
            let mut all = HashSet::new();
            for (g, p) in groups.iter().zip(&picked) {
                prop_assert_eq!(p.len(), k);
                for i in p { prop_assert!(g.contains(i)); prop_assert!(all.insert(*i)); }
            }
            prop_assert_eq!(stratified_pick(&groups, Some(k), seed, &labels).unwrap(), picked);
        }
    }

    #[test]
    fn insufficient_class_is_reported() {
        let labels = LabelSet::from_names("t", &[("a", &[]), ("b", &[])]).unwrap();
        let err = stratified_pick(&[vec![0, 1], vec![2]], Some(2), 1, &labels).unwrap_err();
        assert!(matches!(err, DatasetError::InsufficientClassCount { ref label, available: 1, requested: 2 } if label == "b"));
    }
}
