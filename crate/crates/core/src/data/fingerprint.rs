use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Record, SplitKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFingerprint {
    pub count: usize,
    pub class_histogram: Vec<usize>,
    pub subgroup_histogram: Vec<usize>,
    pub pixel_mean: f64,
    pub pixel_std: f64,
    /// SHA-256 over records sorted by id.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub name: String,
    pub classes: usize,
    pub splits: BTreeMap<String, SplitFingerprint>,
    pub shift_hash: String,
}

impl DatasetFingerprint {
    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("fingerprint serializes")))
    }
}

fn split_fingerprint(records: &[Record], classes: usize) -> SplitFingerprint {
    let mut sorted: Vec<&Record> = records.iter().collect();
    sorted.sort_by_key(|r| r.id);
    let mut class_histogram = vec![0; classes];
    let groups = sorted.iter().map(|r| r.subgroup + 1).max().unwrap_or(0);
    let mut subgroup_histogram = vec![0; groups];
    let mut hasher = Sha256::new();
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for r in &sorted {
        class_histogram[r.label] += 1;
        subgroup_histogram[r.subgroup] += 1;
        hasher.update(r.id.to_le_bytes());
        hasher.update((r.label as u64).to_le_bytes());
        hasher.update((r.subgroup as u64).to_le_bytes());
        for v in &r.views {
            hasher.update((v.height() as u64).to_le_bytes());
            hasher.update((v.width() as u64).to_le_bytes());
            for &p in v.pixels() {
                hasher.update(p.to_le_bytes());
                sum += p;
                sq += p * p;
            }
            n += v.pixels().len();
        }
    }
    let (pixel_mean, pixel_std) = if n == 0 {
        (0.0, 0.0)
    } else {
        let mean = sum / n as f64;
        (mean, (sq / n as f64 - mean * mean).max(0.0).sqrt())
    };
    SplitFingerprint {
        count: sorted.len(),
        class_histogram,
        subgroup_histogram,
        pixel_mean,
        pixel_std,
        content_hash: hex::encode(hasher.finalize()),
    }
}

/// Counts, class and subgroup histograms, pixel moments and content hashes.
/// Independent of record order within a split.
pub fn fingerprint(dataset: &Dataset, shift_hash: &str) -> Result<DatasetFingerprint> {
    if dataset.is_empty() {
        return Err(Error::Empty(format!("dataset {} has no records", dataset.name)));
    }
    let splits = SplitKind::ALL
        .iter()
        .map(|&k| (k.as_str().to_string(), split_fingerprint(dataset.split(k), dataset.classes)))
        .collect();
    Ok(DatasetFingerprint {
        name: dataset.name.clone(),
        classes: dataset.classes,
        splits,
        shift_hash: shift_hash.to_string(),
    })
}
