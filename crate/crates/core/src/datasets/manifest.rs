//! Pinned sample lists. Tab-separated text:
//!
//! ```text
//! #manifest	1
//! #dataset_id	cifar10
//! #seed	42
//! #label	airplane	aeroplane|plane
//! cifar10-test-00017	@17	airplane
//! skin-cancer/healthy/a.jpg	healthy/a.jpg	healthy
//! ```
//!
//! `@n` names record `n` of the CIFAR-10 test batch; anything else is a path
//! relative to the dataset root.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{io_err, DatasetError, DatasetManifest, EntryLocation, ManifestEntry};
use crate::types::{ClassLabel, LabelSet};

const FORMAT_VERSION: &str = "1";

fn check_field(field: &str, what: &str) -> Result<(), DatasetError> {
    if field.contains(['\t', '\n', '\r']) || field.is_empty() {
        return Err(DatasetError::Parse {
            line: 0,
            reason: format!("{what} {field:?} cannot be written"),
        });
    }
    Ok(())
}

pub fn render_manifest(manifest: &DatasetManifest) -> Result<String, DatasetError> {
    let mut out = String::new();
    check_field(&manifest.dataset_id, "dataset id")?;
    let _ = writeln!(out, "#manifest\t{FORMAT_VERSION}");
    let _ = writeln!(out, "#dataset_id\t{}", manifest.dataset_id);
    let _ = writeln!(out, "#seed\t{}", manifest.seed);
    for label in manifest.label_set.labels() {
        check_field(label.name(), "label")?;
        for a in label.aliases() {
            check_field(a, "alias")?;
            if a.contains('|') {
                return Err(DatasetError::Parse {
                    line: 0,
                    reason: format!("alias {a:?} contains '|'"),
                });
            }
        }
        let _ = writeln!(out, "#label\t{}\t{}", label.name(), label.aliases().join("|"));
    }
    for e in &manifest.entries {
        check_field(&e.sample_id, "sample id")?;
        let loc = match &e.location {
            EntryLocation::Record(i) => format!("@{i}"),
            EntryLocation::Path(p) => p.to_string_lossy().replace('\\', "/"),
        };
        check_field(&loc, "location")?;
        if loc.starts_with('@') && matches!(e.location, EntryLocation::Path(_)) {
            return Err(DatasetError::Parse {
                line: 0,
                reason: format!("path {loc:?} starts with '@'"),
            });
        }
        let _ = writeln!(out, "{}\t{loc}\t{}", e.sample_id, e.label);
    }
    Ok(out)
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, DatasetError> {
    let err = |line: usize, reason: String| DatasetError::Parse { line, reason };
    let mut version = None;
    let mut dataset_id = None;
    let mut seed = None;
    let mut labels = Vec::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if let Some(key) = fields[0].strip_prefix('#') {
            match (key, fields.len()) {
                ("manifest", 2) => version = Some(fields[1].to_string()),
                ("dataset_id", 2) => dataset_id = Some(fields[1].to_string()),
                ("seed", 2) => {
                    seed = Some(
                        fields[1]
                            .parse::<u64>()
                            .map_err(|e| err(line_no, format!("seed: {e}")))?,
                    )
                }
                ("label", 2 | 3) => {
                    let aliases: Vec<&str> = fields
                        .get(2)
                        .map(|a| a.split('|').filter(|s| !s.is_empty()).collect())
                        .unwrap_or_default();
                    labels.push(ClassLabel::with_aliases(fields[1], &aliases).map_err(|e| err(line_no, e.to_string()))?);
                }
                _ => return Err(err(line_no, format!("unrecognized header {line:?}"))),
            }
            continue;
        }
        if fields.len() != 3 {
            return Err(err(line_no, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let location = match fields[1].strip_prefix('@') {
            Some(n) => EntryLocation::Record(
                n.parse()
                    .map_err(|e| err(line_no, format!("record index {n:?}: {e}")))?,
            ),
            None => EntryLocation::Path(PathBuf::from(fields[1])),
        };
        entries.push((
            line_no,
            ManifestEntry {
                sample_id: fields[0].to_string(),
                location,
                label: fields[2].to_string(),
            },
        ));
    }
    match version.as_deref() {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(err(1, format!("unsupported manifest version {v:?}"))),
        None => return Err(err(1, "missing #manifest header".into())),
    }
    let dataset_id = dataset_id.ok_or_else(|| err(1, "missing #dataset_id header".into()))?;
    let seed = seed.ok_or_else(|| err(1, "missing #seed header".into()))?;
    let label_set = LabelSet::new(&dataset_id, labels).map_err(|e| err(1, e.to_string()))?;
    let mut ids = std::collections::HashSet::new();
    for (line_no, e) in &entries {
        if label_set.index_of(&e.label).is_none() {
            return Err(err(*line_no, format!("label {:?} not in label set", e.label)));
        }
        if !ids.insert(e.sample_id.as_str()) {
            return Err(err(*line_no, format!("duplicate sample id {:?}", e.sample_id)));
        }
    }
    Ok(DatasetManifest {
        dataset_id,
        label_set,
        entries: entries.into_iter().map(|(_, e)| e).collect(),
        seed,
    })
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), DatasetError> {
    let text = render_manifest(manifest)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_manifest(&text)
}

/// Reads a manifest and warns when the seed it was drawn with differs from
/// the seed of the current run. The manifest wins.
pub fn read_manifest_checked(
    path: &Path,
    run_seed: Option<u64>,
) -> Result<(DatasetManifest, Option<String>), DatasetError> {
    let manifest = read_manifest(path)?;
    let warning = run_seed.filter(|s| *s != manifest.seed).map(|s| {
        format!(
            "{}: manifest was drawn with seed {}, run seed {s} ignored",
            path.display(),
            manifest.seed
        )
    });
    Ok((manifest, warning))
}
