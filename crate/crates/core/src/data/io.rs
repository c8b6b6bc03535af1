//! Bundle directory layout:
//!
//! - `bundle.json`: seed and generation specs
//! - `index.csv`: one row per record
//! - `pixels.bin`: every view's pixels as little-endian `f64`, in index order
//! - `fingerprint.json`: per-dataset fingerprints

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fingerprint, BaseSpec, Dataset, Record, ShiftSpec, SplitKind, TaskBundle};
use crate::augment::Image;
use crate::error::{Error, Result};

pub const BUNDLE_META: &str = "bundle.json";
pub const BUNDLE_INDEX: &str = "index.csv";
pub const BUNDLE_PIXELS: &str = "pixels.bin";
const FORMAT: &str = "shiftlab-bundle";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: String,
    version: u32,
    seed: u64,
    base: BaseSpec,
    shift: ShiftSpec,
    secondary_shift: Option<ShiftSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    id: u64,
    dataset: String,
    split: String,
    label: usize,
    clean_label: usize,
    subgroup: usize,
    views: usize,
    height: usize,
    width: usize,
    channels: usize,
}

fn groups(bundle: &TaskBundle) -> Vec<(&str, SplitKind, &[Record])> {
    let mut out: Vec<(&str, SplitKind, &[Record])> = vec![("d_u", SplitKind::Train, &bundle.unlabeled)];
    for ds in bundle.datasets() {
        for k in SplitKind::ALL {
            out.push((ds.name.as_str(), k, ds.split(k)));
        }
    }
    out
}

pub fn save_bundle(bundle: &TaskBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = Meta {
        format: FORMAT.into(),
        version: VERSION,
        seed: bundle.seed,
        base: bundle.base.clone(),
        shift: bundle.shift.clone(),
        secondary_shift: bundle.secondary_shift.clone(),
    };
    std::fs::write(dir.join(BUNDLE_META), serde_json::to_string_pretty(&meta)?)?;

    let mut index = csv::Writer::from_path(dir.join(BUNDLE_INDEX))?;
    let mut pixels = BufWriter::new(File::create(dir.join(BUNDLE_PIXELS))?);
    for (name, split, records) in groups(bundle) {
        for r in records {
            let first = r.views.first().ok_or_else(|| Error::Empty(format!("record {} has no views", r.id)))?;
            index.serialize(IndexRow {
                id: r.id,
                dataset: name.to_string(),
                split: split.as_str().to_string(),
                label: r.label,
                clean_label: r.clean_label,
                subgroup: r.subgroup,
                views: r.views.len(),
                height: first.height(),
                width: first.width(),
                channels: first.channels(),
            })?;
            for v in &r.views {
                for p in v.pixels() {
                    pixels.write_all(&p.to_le_bytes())?;
                }
            }
        }
    }
    index.flush()?;
    pixels.flush()?;

    let mut prints = BTreeMap::new();
    for ds in bundle.datasets() {
        let shift = match ds.name.as_str() {
            "d_out" => bundle.shift.hash(),
            "d_out2" => bundle.secondary_shift.as_ref().map(|s| s.hash()).unwrap_or_default(),
            _ => ShiftSpec::identity().hash(),
        };
        prints.insert(ds.name.clone(), fingerprint(ds, &shift)?);
    }
    std::fs::write(dir.join("fingerprint.json"), serde_json::to_string_pretty(&prints)?)?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<TaskBundle> {
    let meta: Meta = serde_json::from_str(&std::fs::read_to_string(dir.join(BUNDLE_META))?)?;
    if meta.format != FORMAT || meta.version != VERSION {
        return Err(Error::Format(format!("unsupported bundle {} v{}", meta.format, meta.version)));
    }
    let mut pixels = BufReader::new(File::open(dir.join(BUNDLE_PIXELS))?);
    let mut bundle = TaskBundle {
        seed: meta.seed,
        unlabeled: Vec::new(),
        upstream: Dataset { name: "upstream".into(), classes: meta.base.upstream_classes, train: vec![], val: vec![], test: vec![] },
        d_in: Dataset { name: "d_in".into(), classes: meta.base.classes, train: vec![], val: vec![], test: vec![] },
        d_out: Dataset { name: "d_out".into(), classes: meta.base.classes, train: vec![], val: vec![], test: vec![] },
        d_out2: meta
            .secondary_shift
            .as_ref()
            .map(|_| Dataset { name: "d_out2".into(), classes: meta.base.classes, train: vec![], val: vec![], test: vec![] }),
        base: meta.base,
        shift: meta.shift,
        secondary_shift: meta.secondary_shift,
    };
    let mut buf = [0u8; 8];
    for row in csv::Reader::from_path(dir.join(BUNDLE_INDEX))?.deserialize() {
        let row: IndexRow = row?;
        let mut views = Vec::with_capacity(row.views);
        for _ in 0..row.views {
            let n = row.height * row.width * row.channels;
            let mut px = Vec::with_capacity(n);
            for _ in 0..n {
                pixels.read_exact(&mut buf).map_err(|_| Error::Format("pixels.bin is truncated".into()))?;
                px.push(f64::from_le_bytes(buf));
            }
            views.push(Image::new(row.height, row.width, row.channels, px)?);
        }
        let record = Record { id: row.id, label: row.label, clean_label: row.clean_label, subgroup: row.subgroup, views };
        let split = SplitKind::parse(&row.split)?;
        let target = match row.dataset.as_str() {
            "d_u" => &mut bundle.unlabeled,
            "upstream" => bundle.upstream.split_mut(split),
            "d_in" => bundle.d_in.split_mut(split),
            "d_out" => bundle.d_out.split_mut(split),
            "d_out2" => bundle
                .d_out2
                .as_mut()
                .ok_or_else(|| Error::Format("d_out2 rows without a secondary shift".into()))?
                .split_mut(split),
            other => return Err(Error::Format(format!("unknown dataset {other:?} in index"))),
        };
        target.push(record);
    }
    if pixels.read(&mut buf)? != 0 {
        return Err(Error::Format("pixels.bin has trailing data".into()));
    }
    Ok(bundle)
}
