use std::path::{Path, PathBuf};

use super::{io_err, stratified_pick, DatasetError, DatasetManifest, EntryLocation, ManifestEntry};
use crate::types::{normalize_label_token, ClassLabel, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    PerClass(usize),
    All,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
}

/// Finds the class subdirectory, accepting the canonical name or any alias
/// in any letter case.
fn class_dir(root: &Path, label: &ClassLabel) -> Result<PathBuf, DatasetError> {
    let direct = root.join(label.name());
    if direct.is_dir() {
        return Ok(direct);
    }
    let forms = label.normalized_forms();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.into_iter()
        .find(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| forms.contains(&normalize_label_token(&n.replace(['_', '-'], " "))))
        })
        .ok_or_else(|| DatasetError::MissingClassDirectory(label.name().to_string()))
}

/// Builds a manifest from a `root/<class>/<image>` tree. Files are ordered
/// by name before sampling.
pub fn load_image_folder(
    root: &Path,
    labels: &LabelSet,
    sampling: Sampling,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    let mut files_per_class = Vec::with_capacity(labels.len());
    for label in labels.labels() {
        let dir = class_dir(root, label)?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        if files.is_empty() {
            return Err(DatasetError::EmptyClassDirectory(label.name().to_string()));
        }
        files.sort();
        files_per_class.push(files);
    }

    let mut next = 0;
    let groups: Vec<Vec<usize>> = files_per_class
        .iter()
        .map(|f| {
            let g = (next..next + f.len()).collect();
            next += f.len();
            g
        })
        .collect();
    let per_class = match sampling {
        Sampling::PerClass(k) => Some(k),
        Sampling::All => None,
    };
    let picked = stratified_pick(&groups, per_class, seed, labels)?;

    let flat: Vec<&PathBuf> = files_per_class.iter().flatten().collect();
    let mut entries = Vec::new();
    for (class_idx, indices) in picked.iter().enumerate() {
        let label = labels.labels()[class_idx].name();
        for &i in indices {
            let rel = flat[i].strip_prefix(root).unwrap_or(flat[i]).to_path_buf();
            entries.push(ManifestEntry {
                sample_id: rel.to_string_lossy().replace('\\', "/"),
                location: EntryLocation::Path(rel),
                label: label.to_string(),
            });
        }
    }
    let manifest = DatasetManifest {
        dataset_id: labels.dataset_id().to_string(),
        label_set: labels.clone(),
        entries,
        seed,
    };
    manifest.validate()?;
    Ok(manifest)
}
