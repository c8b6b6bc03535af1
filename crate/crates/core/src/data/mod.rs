//! Synthetic task bundles with controlled distribution shift.
//!
//! A bundle holds an unlabeled pool `D_u`, an in-distribution labeled set
//! `D_in`, one or two shifted labeled sets `D_out`, and a labeled upstream
//! proxy set used for supervised pretraining.

mod fingerprint;
mod io;
mod synth;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use fingerprint::{fingerprint, DatasetFingerprint, SplitFingerprint};
pub use io::{load_bundle, save_bundle, BUNDLE_INDEX, BUNDLE_META, BUNDLE_PIXELS};
pub use synth::{
    apply_technology_shift, generate_task, render_pattern, BaseSpec, BehaviorShift, PopulationShift, ShiftSpec,
    SplitSizes, TechnologyShift, PATTERN_FAMILIES,
};

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    pub label: usize,
    /// Label before any behavior-shift or planted subgroup noise.
    pub clean_label: usize,
    pub subgroup: usize,
    pub views: Vec<Image>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Val, SplitKind::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "val" => Ok(SplitKind::Val),
            "test" => Ok(SplitKind::Test),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

/// Labeled dataset with train/validation/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub classes: usize,
    pub train: Vec<Record>,
    pub val: Vec<Record>,
    pub test: Vec<Record>,
}

impl Dataset {
    pub fn split(&self, kind: SplitKind) -> &[Record] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, kind: SplitKind) -> &mut Vec<Record> {
        match kind {
            SplitKind::Train => &mut self.train,
            SplitKind::Val => &mut self.val,
            SplitKind::Test => &mut self.test,
        }
    }

    pub fn label_space(&self) -> BTreeSet<usize> {
        (0..self.classes).collect()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskBundle {
    pub seed: u64,
    pub base: BaseSpec,
    pub shift: ShiftSpec,
    pub secondary_shift: Option<ShiftSpec>,
    pub unlabeled: Vec<Record>,
    pub upstream: Dataset,
    pub d_in: Dataset,
    pub d_out: Dataset,
    pub d_out2: Option<Dataset>,
}

impl TaskBundle {
    pub fn image_shape(&self) -> [usize; 3] {
        [self.base.channels, self.base.image_size, self.base.image_size]
    }

    /// Every labeled dataset, in a fixed order.
    pub fn datasets(&self) -> Vec<&Dataset> {
        let mut out = vec![&self.upstream, &self.d_in, &self.d_out];
        out.extend(self.d_out2.as_ref());
        out
    }
}

/// Stratified, nested subsample of `records`. Returns indices in ascending
/// order. Each class keeps `round(fraction·count)` records (at least one
/// when `fraction > 0`), taken as a prefix of a per-class permutation that
/// depends only on `seed`, so smaller fractions are subsets of larger ones.
pub fn subsample_fraction(records: &[Record], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("label fraction {fraction} outside [0, 1]")));
    }
    if fraction == 0.0 {
        return Ok(Vec::new());
    }
    if records.is_empty() {
        return Err(Error::Empty("cannot subsample an empty split".into()));
    }
    if fraction == 1.0 {
        return Ok((0..records.len()).collect());
    }
    let classes = records.iter().map(|r| r.label).max().unwrap() + 1;
    let mut picked = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == c).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut seed::rng_for(&[seed, c as u64, seed::label_key("subsample")]));
        let take = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        picked.extend_from_slice(&members[..take]);
    }
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests;
