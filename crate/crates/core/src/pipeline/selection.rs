//! Contrastive checkpoint bookkeeping and minimum-loss selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: u64,
    pub loss: f64,
    /// Content hash of the parameter snapshot.
    pub params_hash: String,
}

/// Steps at which checkpoints are taken: `0, every, 2·every, …` and `max`
/// itself when `every` does not divide it.
pub fn checkpoint_steps(max: u64, every: u64) -> Result<Vec<u64>> {
    if every == 0 {
        return Err(Error::Config("checkpoint interval must be positive".into()));
    }
    let mut steps: Vec<u64> = (0..=max / every).map(|k| k * every).collect();
    if max % every != 0 {
        steps.push(max);
    }
    Ok(steps)
}

/// First step of the selection window `[⌈0.999·M⌉, M]`.
pub fn window_start(max: u64) -> u64 {
    // ⌈999·M / 1000⌉ in integers.
    (999 * max).div_ceil(1000)
}

/// Minimum-loss record with `window_start(M) ≤ step ≤ M`; the earliest
/// step wins ties.
pub fn select_checkpoint(records: &[CheckpointRecord], max: u64) -> Result<&CheckpointRecord> {
    if records.windows(2).any(|w| w[0].step >= w[1].step) {
        return Err(Error::invalid("checkpoint steps must be strictly increasing"));
    }
    let start = window_start(max);
    let mut best: Option<&CheckpointRecord> = None;
    for r in records.iter().filter(|r| (start..=max).contains(&r.step)) {
        if r.loss.is_nan() {
            return Err(Error::invalid(format!("checkpoint at step {} has NaN loss", r.step)));
        }
        if best.map_or(true, |b| r.loss < b.loss) {
            best = Some(r);
        }
    }
    best.ok_or(Error::EmptyWindow { start, end: max })
}
