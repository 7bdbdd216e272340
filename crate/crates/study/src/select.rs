use std::collections::HashMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use maric_core::backend::encode_image;
use maric_core::harness::read_transcript_log;
use maric_core::{ImageSample, Method, Transcript};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::store::StudyStore;
use crate::{io_err, ItemAspect, StudyError, StudyItem, StudyManifest};

/// The rating protocol shows three aspects per image.
pub const ASPECTS_PER_ITEM: usize = 3;

/// Successful MARIC transcripts with exactly three aspect descriptions,
/// sorted by sample id.
pub fn eligible(transcripts: &[Transcript]) -> Vec<&Transcript> {
    let mut out: Vec<&Transcript> = transcripts
        .iter()
        .filter(|t| {
            t.method == Method::Maric
                && !t.failed()
                && t.prompts.len() == ASPECTS_PER_ITEM
                && t.descriptions.len() == ASPECTS_PER_ITEM
        })
        .collect();
    out.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    out
}

/// Seeded uniform sample of `k` eligible transcripts, in draw order.
pub fn select_items(transcripts: &[Transcript], k: usize, seed: u64) -> Result<Vec<&Transcript>, StudyError> {
    let pool = eligible(transcripts);
    if pool.len() < k {
        return Err(StudyError::InsufficientTranscripts {
            eligible: pool.len(),
            requested: k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

/// Samples `k` items from a transcript log, copies their images into the
/// store and writes the item list. `samples` supplies the images by id.
pub fn build_study(
    transcript_log: &Path,
    samples: &[ImageSample],
    k: usize,
    seed: u64,
    store_dir: &Path,
) -> Result<StudyStore, StudyError> {
    let transcripts = read_transcript_log(transcript_log)?;
    let picked = select_items(&transcripts, k, seed)?;
    let by_id: HashMap<&str, &ImageSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let width = k.to_string().len().max(2);
    let mut items = Vec::with_capacity(k);
    let mut images = Vec::with_capacity(k);
    for (i, t) in picked.iter().enumerate() {
        let sample = by_id
            .get(t.sample_id.as_str())
            .ok_or_else(|| StudyError::MissingImage(t.sample_id.clone()))?;
        let image = encode_image(sample)?;
        let bytes = STANDARD.decode(&image.base64).map_err(|e| StudyError::Corrupt {
            path: transcript_log.to_path_buf(),
            message: e.to_string(),
        })?;
        let item_id = format!("item{:0width$}", i + 1);
        let ext = if image.media_type == "image/jpeg" { "jpg" } else { "png" };
        items.push(StudyItem {
            image_file: format!("{item_id}.{ext}"),
            item_id,
            sample_id: t.sample_id.clone(),
            dataset_id: t.dataset_id.clone(),
            media_type: image.media_type,
            aspects: t
                .descriptions
                .iter()
                .map(|d| ItemAspect {
                    index: d.prompt.index,
                    prompt: d.prompt.render(),
                    description: d.text.clone(),
                })
                .collect(),
        });
        images.push(bytes);
    }
    StudyStore::create(store_dir, &StudyManifest { seed, items }, &images)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StudyError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}
