//! Synthetic datasets and scripted mock backends with known answers, for
//! tests and offline demonstrations.

use std::path::Path;

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{encode_image, MockScript, MockScriptRule};
use crate::datasets::{DatasetError, DatasetManifest, EntryLocation, ManifestEntry};
use crate::types::{ImageSample, LabelSet, RgbRaster};

pub const SYNTHETIC_SIDE: u32 = 8;

pub const OUTLINER_REPLY: &str = "1. Focus on the main object in the center. Describe its shape and color.\n\
2. Focus on the background behind the object. Describe the setting.\n\
3. Focus on the textures on the object's surface. Describe them in detail.\n\
4. Focus on the lighting. Describe where it comes from.\n\
5. Focus on any small parts or accessories. Describe each one.";

pub const ASPECT_REPLY: &str = "The region shows a compact shape with muted colors and soft edges.";

pub const FALLBACK_REPLY: &str = "<reasoning>No scripted answer for this image.</reasoning><answer>unsure</answer>";

/// A seeded noise raster; the first pixel carries the index, so rasters
/// with different indices always differ.
pub fn synthetic_raster(index: usize, rng: &mut impl Rng) -> RgbRaster {
    let n = (SYNTHETIC_SIDE * SYNTHETIC_SIDE * 3) as usize;
    let mut data: Vec<u8> = (0..n).map(|_| rng.random()).collect();
    data[..3].copy_from_slice(&[(index >> 16) as u8, (index >> 8) as u8, index as u8]);
    RgbRaster::new(SYNTHETIC_SIDE, SYNTHETIC_SIDE, data).expect("synthetic raster size")
}

/// `per_class` in-memory samples per class, in label order.
pub fn synthetic_dataset(
    labels: &LabelSet,
    per_class: usize,
    seed: u64,
) -> Result<(DatasetManifest, Vec<ImageSample>), DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut entries = Vec::new();
    for label in labels.names() {
        for k in 0..per_class {
            let index = samples.len();
            let sample_id = format!("{}-{label}-{k:03}", labels.dataset_id());
            let raster = synthetic_raster(index, &mut rng);
            samples.push(ImageSample::from_raster(&sample_id, labels, label, raster)?);
            entries.push(ManifestEntry {
                location: EntryLocation::Path(format!("{label}/{k:03}.png").into()),
                sample_id,
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
    Ok((manifest, samples))
}

/// Writes the synthetic dataset as a `root/<class>/<k>.png` tree and returns
/// samples loaded back from those files.
pub fn write_synthetic_folder(
    root: &Path,
    labels: &LabelSet,
    per_class: usize,
    seed: u64,
) -> Result<(DatasetManifest, Vec<ImageSample>), DatasetError> {
    let (manifest, samples) = synthetic_dataset(labels, per_class, seed)?;
    let mut from_disk = Vec::with_capacity(samples.len());
    for (entry, sample) in manifest.entries.iter().zip(&samples) {
        let EntryLocation::Path(rel) = &entry.location else {
            unreachable!("synthetic entries are paths")
        };
        let path = root.join(rel);
        let png = encode_image(sample).map_err(|e| DatasetError::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(png.base64.as_bytes())
            .expect("encoder emits valid base64");
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(super::datasets::io_err(dir))?;
        }
        std::fs::write(&path, bytes).map_err(super::datasets::io_err(&path))?;
        from_disk.push(ImageSample::from_file(&entry.sample_id, labels, &entry.label, &path)?);
    }
    Ok((manifest, from_disk))
}

/// The label the oracle script answers for sample `i`: the true label, or
/// the next label in the set when `i` is among the scripted misses.
pub fn oracle_answer<'a>(labels: &'a LabelSet, sample: &ImageSample, wrong: bool) -> &'a str {
    let names = labels.names();
    let i = labels.index_of(&sample.true_label).expect("sample label in set");
    if wrong {
        names[(i + 1) % names.len()]
    } else {
        names[i]
    }
}

/// Script under which exactly the samples with `is_wrong(i) == false` are
/// classified correctly, for every method. Rules key on each image's
/// base64 payload, so answers do not depend on call order.
pub fn oracle_script(labels: &LabelSet, samples: &[ImageSample], is_wrong: impl Fn(usize) -> bool) -> MockScript {
    let mut rules = vec![
        MockScriptRule {
            role: Some("outliner".into()),
            response: Some(OUTLINER_REPLY.into()),
            ..MockScriptRule::default()
        },
        MockScriptRule {
            role: Some("aspect".into()),
            response: Some(ASPECT_REPLY.into()),
            ..MockScriptRule::default()
        },
    ];
    for (i, sample) in samples.iter().enumerate() {
        let answer = oracle_answer(labels, sample, is_wrong(i));
        let needle = encode_image(sample).expect("fixture images encode").base64;
        rules.push(MockScriptRule {
            role: Some("direct".into()),
            contains: Some(needle.clone()),
            response: Some(answer.to_string()),
            ..MockScriptRule::default()
        });
        rules.push(MockScriptRule {
            contains: Some(needle),
            response: Some(format!(
                "<reasoning>The described parts fit one class best.</reasoning><answer>{answer}</answer>"
            )),
            ..MockScriptRule::default()
        });
    }
    MockScript {
        default_response: FALLBACK_REPLY.into(),
        rules,
        ..MockScript::default()
    }
}
