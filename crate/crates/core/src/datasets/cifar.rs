//! CIFAR-10 binary batches: each record is one label byte followed by
//! 3072 channel-planar pixel bytes (1024 red, 1024 green, 1024 blue, rows
//! top to bottom).

use std::path::Path;

use super::{io_err, stratified_pick, DatasetError, DatasetManifest, EntryLocation, ManifestEntry};
use crate::types::{ImageSample, LabelSet, RgbRaster};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * CIFAR_PLANE;
/// Sampling draws from the test batch only.
pub const CIFAR_TEST_BATCH: &str = "test_batch.bin";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub raster: RgbRaster,
}

/// Decodes a whole batch file into interleaved-RGB rasters.
pub fn decode_cifar_batch(bytes: &[u8], path: &Path) -> Result<Vec<CifarRecord>, DatasetError> {
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(DatasetError::BadRecordLength {
            path: path.to_path_buf(),
            len: bytes.len(),
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0];
            if label > 9 {
                return Err(DatasetError::UnknownLabelByte { record: i, byte: label });
            }
            let planes = &rec[1..];
            let mut rgb = Vec::with_capacity(3 * CIFAR_PLANE);
            for p in 0..CIFAR_PLANE {
                rgb.extend([planes[p], planes[CIFAR_PLANE + p], planes[2 * CIFAR_PLANE + p]]);
            }
            Ok(CifarRecord {
                label,
                raster: RgbRaster::new(CIFAR_SIDE as u32, CIFAR_SIDE as u32, rgb)?,
            })
        })
        .collect()
}

/// Inverse of decoding, used to build synthetic batches.
pub fn encode_cifar_record(label: u8, raster: &RgbRaster) -> Vec<u8> {
    let mut out = vec![0u8; CIFAR_RECORD_LEN];
    out[0] = label;
    for p in 0..CIFAR_PLANE {
        for c in 0..3 {
            out[1 + c * CIFAR_PLANE + p] = raster.data[p * 3 + c];
        }
    }
    out
}

/// Samples `per_class` test-batch images per class with a seeded shuffle.
pub fn load_cifar10(
    binary_dir: &Path,
    labels: &LabelSet,
    per_class: usize,
    seed: u64,
) -> Result<(DatasetManifest, Vec<ImageSample>), DatasetError> {
    let path = binary_dir.join(CIFAR_TEST_BATCH);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let records = decode_cifar_batch(&bytes, &path)?;
    let mut groups = vec![Vec::new(); labels.len()];
    for (i, r) in records.iter().enumerate() {
        let group = groups
            .get_mut(r.label as usize)
            .ok_or(DatasetError::UnknownLabelByte { record: i, byte: r.label })?;
        group.push(i);
    }
    let picked = stratified_pick(&groups, Some(per_class), seed, labels)?;
    let mut entries = Vec::new();
    let mut samples = Vec::new();
    for (class_idx, indices) in picked.iter().enumerate() {
        let name = labels.labels()[class_idx].name();
        for &i in indices {
            let sample_id = format!("{}-test-{i:05}", labels.dataset_id());
            samples.push(ImageSample::from_raster(&sample_id, labels, name, records[i].raster.clone())?);
            entries.push(ManifestEntry {
                sample_id,
                location: EntryLocation::Record(i),
                label: name.to_string(),
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
    Ok((manifest, samples))
}
