//! On-disk study: items.json, images/, and an append-only ratings log that
//! is compacted to one line per (rater, item) when it grows.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use maric_core::sha256_hex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::select::write_file;
use crate::stats::{summarize, StudySummary};
use crate::{io_err, Rating, StudyError, StudyItem, StudyManifest};

pub const ITEMS_FILE: &str = "items.json";
pub const IMAGES_DIR: &str = "images";
pub const RATINGS_LOG: &str = "ratings.log";

type Key = (String, String);

struct Ratings {
    by_key: BTreeMap<Key, Rating>,
    file: File,
    lines: usize,
}

pub struct StudyStore {
    dir: PathBuf,
    manifest: StudyManifest,
    ratings: Mutex<Ratings>,
}

impl std::fmt::Debug for StudyStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StudyStore")
            .field("dir", &self.dir)
            .field("items", &self.manifest.items.len())
            .finish()
    }
}

/// Seeded per-rater presentation order over item indices.
pub fn rater_order(seed: u64, rater_id: &str, n: usize) -> Vec<usize> {
    let digest = sha256_hex(format!("{seed}:{rater_id}").as_bytes());
    let stream = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
    order
}

fn corrupt(path: &Path, message: String) -> StudyError {
    StudyError::Corrupt {
        path: path.to_path_buf(),
        message,
    }
}

fn open_append(path: &Path) -> Result<File, StudyError> {
    OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))
}

/// Replays the log; last write per key wins. An unterminated final line is
/// a torn write and is dropped from the file.
fn replay(path: &Path) -> Result<(BTreeMap<Key, Rating>, usize), StudyError> {
    let mut by_key = BTreeMap::new();
    let raw = match std::fs::read(path) {
        Ok(r) => r,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((by_key, 0)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let keep = raw.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    if keep < raw.len() {
        tracing::warn!(path = %path.display(), dropped = raw.len() - keep, "truncating torn rating line");
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(keep as u64).map_err(io_err(path))?;
    }
    let mut lines = 0;
    for (i, line) in BufReader::new(&raw[..keep]).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Rating = serde_json::from_str(&line).map_err(|e| corrupt(path, format!("line {}: {e}", i + 1)))?;
        lines += 1;
        by_key.insert((r.rater_id.clone(), r.item_id.clone()), r);
    }
    Ok((by_key, lines))
}

impl StudyStore {
    /// Writes a new study. Refuses a directory that already holds one so
    /// that collected ratings are never discarded.
    pub fn create(dir: &Path, manifest: &StudyManifest, images: &[Vec<u8>]) -> Result<Self, StudyError> {
        let items_path = dir.join(ITEMS_FILE);
        if items_path.exists() {
            return Err(StudyError::StoreExists(dir.to_path_buf()));
        }
        let image_dir = dir.join(IMAGES_DIR);
        std::fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;
        for (item, bytes) in manifest.items.iter().zip(images) {
            write_file(&image_dir.join(&item.image_file), bytes)?;
        }
        let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        write_file(&items_path, json.as_bytes())?;
        write_file(&dir.join(RATINGS_LOG), b"")?;
        Self::open(dir)
    }

    pub fn open(dir: &Path) -> Result<Self, StudyError> {
        let items_path = dir.join(ITEMS_FILE);
        let raw = match std::fs::read_to_string(&items_path) {
            Ok(r) => r,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StudyError::NotBuilt(dir.to_path_buf())),
            Err(e) => return Err(io_err(&items_path)(e)),
        };
        let manifest: StudyManifest = serde_json::from_str(&raw).map_err(|e| corrupt(&items_path, e.to_string()))?;
        let log = dir.join(RATINGS_LOG);
        let (by_key, lines) = replay(&log)?;
        let store = Self {
            dir: dir.to_path_buf(),
            manifest,
            ratings: Mutex::new(Ratings {
                by_key,
                file: open_append(&log)?,
                lines,
            }),
        };
        {
            let mut r = store.ratings.lock().expect("ratings lock");
            if r.lines > r.by_key.len() {
                store.compact(&mut r)?;
            }
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn seed(&self) -> u64 {
        self.manifest.seed
    }

    pub fn items(&self) -> &[StudyItem] {
        &self.manifest.items
    }

    pub fn item(&self, item_id: &str) -> Option<&StudyItem> {
        self.manifest.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn image_path(&self, item: &StudyItem) -> PathBuf {
        self.dir.join(IMAGES_DIR).join(&item.image_file)
    }

    /// Items in the rater's presentation order.
    pub fn items_for(&self, rater_id: &str) -> Vec<&StudyItem> {
        rater_order(self.manifest.seed, rater_id, self.manifest.items.len())
            .into_iter()
            .map(|i| &self.manifest.items[i])
            .collect()
    }

    /// Persists a rating, replacing any earlier one for the same rater and
    /// item. Returns whether one was replaced.
    pub fn record(&self, rating: Rating) -> Result<bool, StudyError> {
        rating.validate()?;
        if self.item(&rating.item_id).is_none() {
            return Err(StudyError::UnknownItem(rating.item_id));
        }
        let mut line = serde_json::to_string(&rating).expect("rating serializes");
        line.push('\n');
        let log = self.dir.join(RATINGS_LOG);
        let mut r = self.ratings.lock().expect("ratings lock");
        r.file.write_all(line.as_bytes()).map_err(io_err(&log))?;
        r.file.flush().map_err(io_err(&log))?;
        r.lines += 1;
        let replaced = r
            .by_key
            .insert((rating.rater_id.clone(), rating.item_id.clone()), rating)
            .is_some();
        if r.lines > 2 * r.by_key.len() + 64 {
            self.compact(&mut r)?;
        }
        Ok(replaced)
    }

    pub fn rating(&self, rater_id: &str, item_id: &str) -> Option<Rating> {
        let r = self.ratings.lock().expect("ratings lock");
        r.by_key.get(&(rater_id.to_string(), item_id.to_string())).cloned()
    }

    /// Current ratings ordered by (rater, item).
    pub fn ratings(&self) -> Vec<Rating> {
        let r = self.ratings.lock().expect("ratings lock");
        r.by_key.values().cloned().collect()
    }

    pub fn rated_by(&self, rater_id: &str) -> Vec<String> {
        let r = self.ratings.lock().expect("ratings lock");
        r.by_key
            .keys()
            .filter(|(rater, _)| rater == rater_id)
            .map(|(_, item)| item.clone())
            .collect()
    }

    pub fn summary(&self) -> StudySummary {
        summarize(&self.ratings())
    }

    /// Rewrites the log with one line per key via a temp file and rename.
    fn compact(&self, r: &mut Ratings) -> Result<(), StudyError> {
        let log = self.dir.join(RATINGS_LOG);
        let tmp = self.dir.join(format!("{RATINGS_LOG}.tmp"));
        let mut body = String::new();
        for rating in r.by_key.values() {
            body.push_str(&serde_json::to_string(rating).expect("rating serializes"));
            body.push('\n');
        }
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(body.as_bytes()).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        std::fs::rename(&tmp, &log).map_err(io_err(&log))?;
        r.file = open_append(&log)?;
        r.lines = r.by_key.len();
        Ok(())
    }
}
