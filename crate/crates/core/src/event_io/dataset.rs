//! Raw dataset discovery and the prepared slice cache.
//!
//! N-MNIST raw layout: `Train/<digit>/*.bin` and `Test/<digit>/*.bin`.
//! DVS Gesture raw layout: `trials_to_train.txt` / `trials_to_test.txt` listing
//! `.aedat` files, each next to its `<stem>_labels.csv`.
//! Either may carry a `SHA256SUMS` file (`<hex>  <relative path>` lines) which is verified.
//!
//! A cache directory holds `meta.toml`, `index.csv` and `train/`, `test/` NVSL files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{collapse, gesture, nmnist, nvsl, SliceSequence};
use crate::error::{Error, Result};
use crate::training::Split;

fn split_dir(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Nmnist,
    Gesture,
}

impl DatasetKind {
    pub fn sensor_size(self) -> usize {
        match self {
            DatasetKind::Nmnist => nmnist::SENSOR_SIZE as usize,
            DatasetKind::Gesture => gesture::SENSOR_SIZE as usize,
        }
    }

    /// Guess the dataset from the raw directory layout.
    pub fn detect(raw_dir: &Path) -> Result<Self> {
        if raw_dir.join("Train").is_dir() {
            Ok(DatasetKind::Nmnist)
        } else if raw_dir.join("trials_to_train.txt").is_file() {
            Ok(DatasetKind::Gesture)
        } else {
            Err(Error::UnsupportedFormat(format!(
                "{} has neither Train/ (N-MNIST) nor trials_to_train.txt (DVS Gesture)",
                raw_dir.display()
            )))
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Nmnist => "nmnist",
            DatasetKind::Gesture => "gesture",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nmnist" => Ok(DatasetKind::Nmnist),
            "gesture" => Ok(DatasetKind::Gesture),
            _ => Err(Error::config(format!("unknown dataset {s:?} (nmnist, gesture)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheMeta {
    pub dataset: DatasetKind,
    pub dt_us: u32,
    pub steps: usize,
    pub height: usize,
    pub width: usize,
    pub train: usize,
    pub test: usize,
}

/// Recordings decoded in parallel before being written in order.
const PREPARE_CHUNK: usize = 256;

struct Source {
    path: PathBuf,
    label: Option<u32>,
}

fn list_sorted(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).at(dir))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn nmnist_sources(raw: &Path, split: Split) -> Result<Vec<Source>> {
    let root = raw.join(if split == Split::Train { "Train" } else { "Test" });
    let mut out = Vec::new();
    for digit in 0..10u32 {
        let dir = root.join(digit.to_string());
        if !dir.is_dir() {
            continue;
        }
        out.extend(list_sorted(&dir, "bin")?.into_iter().map(|path| Source { path, label: Some(digit) }));
    }
    Ok(out)
}

fn gesture_sources(raw: &Path, split: Split) -> Result<Vec<Source>> {
    let list = raw.join(if split == Split::Train { "trials_to_train.txt" } else { "trials_to_test.txt" });
    let text = fs::read_to_string(&list).map_err(|e| Error::from(e).at(&list))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| Source { path: raw.join(l), label: None })
        .collect())
}

fn verify_checksums(raw: &Path) -> Result<()> {
    let sums = raw.join("SHA256SUMS");
    let Ok(text) = fs::read_to_string(&sums) else { return Ok(()) };
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (hash, rel) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::Malformed(format!("bad SHA256SUMS line {line:?}")).at(&sums))?;
        let path = raw.join(rel.trim_start().trim_start_matches('*'));
        let found = sha256_file(&path)?;
        if !found.eq_ignore_ascii_case(hash) {
            return Err(Error::Checksum { path, expected: hash.to_string(), found });
        }
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).at(path))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn decode_source(kind: DatasetKind, src: &Source, dt_us: u32, steps: usize) -> Result<Vec<SliceSequence>> {
    let bytes = fs::read(&src.path).map_err(|e| Error::from(e).at(&src.path))?;
    let streams = match kind {
        DatasetKind::Nmnist => {
            let mut s = nmnist::parse_nmnist(&bytes).map_err(|e| e.at(&src.path))?;
            s.label = src.label;
            vec![s]
        }
        DatasetKind::Gesture => {
            let stem = src.path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let labels = src.path.with_file_name(format!("{stem}_labels.csv"));
            let csv = fs::read_to_string(&labels).map_err(|e| Error::from(e).at(&labels))?;
            gesture::parse_gesture(&bytes, &csv).map_err(|e| e.at(&src.path))?
        }
    };
    streams
        .iter()
        .map(|s| {
            s.validate().map_err(|e| e.at(&src.path))?;
            Ok(collapse(s, dt_us, steps))
        })
        .collect()
}

/// Parse, collapse and cache every recording of both splits. Rerunning with the same
/// arguments rewrites identical files.
pub fn prepare(kind: DatasetKind, raw_dir: &Path, out_dir: &Path, dt_us: u32, steps: usize) -> Result<CacheMeta> {
    if dt_us == 0 || steps == 0 {
        return Err(Error::config("dt and T must be positive"));
    }
    verify_checksums(raw_dir)?;
    let mut index = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    index.write_record(["split", "file", "label", "source", "sha256"]).map_err(csv_err)?;
    let mut counts = [0usize; 2];
    for (si, split) in [Split::Train, Split::Test].into_iter().enumerate() {
        let sources = match kind {
            DatasetKind::Nmnist => nmnist_sources(raw_dir, split)?,
            DatasetKind::Gesture => gesture_sources(raw_dir, split)?,
        };
        let dir = out_dir.join(split_dir(split));
        fs::create_dir_all(&dir).map_err(|e| Error::from(e).at(&dir))?;
        for chunk in sources.chunks(PREPARE_CHUNK) {
            let decoded: Vec<Vec<SliceSequence>> =
                chunk.par_iter().map(|s| decode_source(kind, s, dt_us, steps)).collect::<Result<_>>()?;
            for (src, seqs) in chunk.iter().zip(decoded) {
                for seq in seqs {
                    let name = format!("{:06}.nvsl", counts[si]);
                    let bytes = nvsl::encode_slices(&seq);
                    let digest = hex::encode(Sha256::digest(&bytes));
                    let path = dir.join(&name);
                    fs::write(&path, &bytes).map_err(|e| Error::from(e).at(&path))?;
                    let rel = src.path.strip_prefix(raw_dir).unwrap_or(&src.path).display().to_string();
                    let label = seq.label.map_or(String::new(), |l| l.to_string());
                    index
                        .write_record([split_dir(split), &name, &label, &rel, &digest])
                        .map_err(csv_err)?;
                    counts[si] += 1;
                }
            }
        }
    }
    let size = kind.sensor_size();
    let meta = CacheMeta { dataset: kind, dt_us, steps, height: size, width: size, train: counts[0], test: counts[1] };
    let index = index.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(out_dir.join("index.csv"), index)?;
    fs::write(out_dir.join("meta.toml"), toml::to_string(&meta).map_err(|e| Error::config(e.to_string()))?)?;
    Ok(meta)
}

pub fn read_meta(cache_dir: &Path) -> Result<CacheMeta> {
    let path = cache_dir.join("meta.toml");
    let text = fs::read_to_string(&path).map_err(|e| Error::from(e).at(&path))?;
    toml::from_str(&text).map_err(|e| Error::Malformed(e.to_string()).at(&path))
}

/// SHA-256 of the cache index, which itself lists the digest of every cached file.
pub fn cache_checksum(cache_dir: &Path) -> Result<String> {
    sha256_file(&cache_dir.join("index.csv"))
}

/// Load a split, optionally a seeded random subset of `limit` recordings kept in
/// cache order.
pub fn load_split(cache_dir: &Path, split: Split, limit: Option<usize>, seed: u64) -> Result<Vec<SliceSequence>> {
    let meta = read_meta(cache_dir)?;
    let n = if split == Split::Train { meta.train } else { meta.test };
    let mut picks: Vec<usize> = match limit {
        Some(k) if k < n => sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec(),
        _ => (0..n).collect(),
    };
    picks.sort_unstable();
    let dir = cache_dir.join(split_dir(split));
    picks
        .par_iter()
        .map(|i| {
            let path = dir.join(format!("{i:06}.nvsl"));
            let bytes = fs::read(&path).map_err(|e| Error::from(e).at(&path))?;
            nvsl::decode_slices(&bytes).map_err(|e| e.at(&path))
        })
        .collect()
}
