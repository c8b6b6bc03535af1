use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Record, SplitKind, TaskBundle};
use crate::augment::{blur_with, Image};
use crate::error::{Error, Result};
use crate::seed::{self, label_key};

/// Number of procedural pattern families (blob, stripes, ring, cross,
/// square, dots).
pub const PATTERN_FAMILIES: usize = 6;

const CONTRAST_PIVOT: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub unlabeled: usize,
    pub in_train: usize,
    pub in_val: usize,
    pub in_test: usize,
    pub out_train: usize,
    pub out_val: usize,
    pub out_test: usize,
    pub upstream_train: usize,
    pub upstream_val: usize,
    pub upstream_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            unlabeled: 2000,
            in_train: 1500,
            in_val: 120,
            in_test: 400,
            out_train: 1700,
            out_val: 430,
            out_test: 660,
            upstream_train: 2000,
            upstream_val: 200,
            upstream_test: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseSpec {
    pub image_size: usize,
    pub channels: usize,
    pub classes: usize,
    pub upstream_classes: usize,
    pub views_per_record: usize,
    pub subgroups: usize,
    pub subgroup_weights: Vec<f64>,
    /// Planted per-subgroup label-noise rate for the downstream sets.
    pub subgroup_label_noise: Vec<f64>,
    /// Class prevalence of `D_u`, `D_in` and the unshifted part of `D_out`;
    /// uniform when absent.
    pub prevalence: Option<Vec<f64>>,
    /// Amplitude of the uniform per-pixel texture.
    pub texture_noise: f64,
    pub sizes: SplitSizes,
}

impl Default for BaseSpec {
    fn default() -> Self {
        BaseSpec {
            image_size: 32,
            channels: 1,
            classes: 3,
            upstream_classes: 4,
            views_per_record: 1,
            subgroups: 2,
            subgroup_weights: vec![0.5, 0.5],
            subgroup_label_noise: vec![0.0, 0.0],
            prevalence: None,
            texture_noise: 0.04,
            sizes: SplitSizes::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TechnologyShift {
    /// Additive intensity offset.
    pub intensity: f64,
    /// Contrast factor about a fixed pivot.
    pub contrast: f64,
    /// Gaussian blur sigma in pixels; 0 disables.
    pub blur_sigma: f64,
    /// Amplitude of extra uniform sensor noise.
    pub noise: f64,
}

impl Default for TechnologyShift {
    fn default() -> Self {
        TechnologyShift { intensity: 0.0, contrast: 1.0, blur_sigma: 0.0, noise: 0.0 }
    }
}

impl TechnologyShift {
    pub fn is_identity(&self) -> bool {
        *self == TechnologyShift::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationShift {
    pub prevalence: Option<Vec<f64>>,
    pub subgroup_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorShift {
    /// Fraction of records whose label is flipped, chosen among the
    /// weakest-signal records.
    pub label_noise: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSpec {
    pub technology: TechnologyShift,
    pub population: PopulationShift,
    pub behavior: BehaviorShift,
}

fn check_simplex(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Config(format!("{name} has {} entries, expected {len}", v.len())));
    }
    if v.iter().any(|p| !(*p >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{name} {v:?} must be nonnegative and sum to 1")));
    }
    Ok(())
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn validate(&self, base: &BaseSpec) -> Result<()> {
        let t = &self.technology;
        if !(t.contrast > 0.0) || !(t.blur_sigma >= 0.0) || !(t.noise >= 0.0) || !t.intensity.is_finite() {
            return Err(Error::Config(format!("invalid technology shift {t:?}")));
        }
        if let Some(p) = &self.population.prevalence {
            check_simplex("shift prevalence", p, base.classes)?;
        }
        if let Some(w) = &self.population.subgroup_weights {
            check_simplex("shift subgroup weights", w, base.subgroups)?;
        }
        let r = self.behavior.label_noise;
        if !(0.0..0.5).contains(&r) {
            return Err(Error::Config(format!("label-noise rate {r} outside [0, 0.5)")));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("shift spec serializes")))
    }
}

impl BaseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.upstream_classes < 2 {
            return Err(Error::Config("tasks need at least two classes".into()));
        }
        if self.classes > PATTERN_FAMILIES || self.upstream_classes > PATTERN_FAMILIES {
            return Err(Error::Config(format!("at most {PATTERN_FAMILIES} classes are available")));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!("image size {} is below 8", self.image_size)));
        }
        if self.views_per_record == 0 || self.subgroups == 0 {
            return Err(Error::Config("views per record and subgroups must be >= 1".into()));
        }
        check_simplex("subgroup weights", &self.subgroup_weights, self.subgroups)?;
        if self.subgroup_label_noise.len() != self.subgroups
            || self.subgroup_label_noise.iter().any(|r| !(0.0..0.5).contains(r))
        {
            return Err(Error::Config("subgroup label noise needs one rate in [0, 0.5) per subgroup".into()));
        }
        if let Some(p) = &self.prevalence {
            check_simplex("prevalence", p, self.classes)?;
        }
        if !(0.0..=0.1).contains(&self.texture_noise) {
            return Err(Error::Config(format!("texture noise {} outside [0, 0.1]", self.texture_noise)));
        }
        let s = &self.sizes;
        if s.in_train == 0 || s.in_val == 0 || s.in_test == 0 || s.out_val == 0 || s.out_test == 0 {
            return Err(Error::Config("labeled splits other than D_out train must be nonempty".into()));
        }
        if s.upstream_train == 0 || s.upstream_val == 0 {
            return Err(Error::Config("upstream train and validation splits must be nonempty".into()));
        }
        Ok(())
    }
}

/// Pattern of `family` at normalized coordinates `(u, v) ∈ [−1, 1]²`,
/// centred at `(cu, cv)` with size `s` and orientation `theta`. Range `[0, 1]`.
pub fn render_pattern(family: usize, u: f64, v: f64, cu: f64, cv: f64, s: f64, theta: f64) -> f64 {
    let (du, dv) = (u - cu, v - cv);
    let (sin, cos) = theta.sin_cos();
    let (ru, rv) = (cos * du + sin * dv, -sin * du + cos * dv);
    let r = (du * du + dv * dv).sqrt();
    let soft = |d: f64, w: f64| 1.0 / (1.0 + (d / w).exp());
    match family {
        0 => (-(r * r) / (2.0 * s * s * 0.5)).exp(),
        1 => {
            let f = 1.5 / s;
            0.5 + 0.5 * (std::f64::consts::PI * f * ru).sin()
        }
        2 => (-((r - s) * (r - s)) / (2.0 * 0.01)).exp(),
        3 => {
            let w = 0.12;
            let arm = |a: f64, b: f64| (-(a * a) / (2.0 * w * w * 0.25)).exp() * soft(b.abs() - s, 0.04);
            arm(ru, rv).max(arm(rv, ru))
        }
        4 => soft(ru.abs().max(rv.abs()) - 0.8 * s, 0.03),
        _ => {
            let p = 0.5 * s;
            let (gu, gv) = (ru / p - (ru / p).round(), rv / p - (rv / p).round());
            (-(gu * gu + gv * gv) / (2.0 * 0.04)).exp() * soft(r - 1.6 * s, 0.05)
        }
    }
}

#[derive(Clone, Copy)]
enum Domain {
    Unlabeled,
    Upstream,
    In,
    Out,
    Out2,
}

impl Domain {
    fn code(self) -> u64 {
        match self {
            Domain::Unlabeled => 1,
            Domain::Upstream => 2,
            Domain::In => 3,
            Domain::Out => 4,
            Domain::Out2 => 5,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Domain::Unlabeled => "d_u",
            Domain::Upstream => "upstream",
            Domain::In => "d_in",
            Domain::Out => "d_out",
            Domain::Out2 => "d_out2",
        }
    }
}

fn split_code(kind: SplitKind) -> u64 {
    match kind {
        SplitKind::Train => 0,
        SplitKind::Val => 1,
        SplitKind::Test => 2,
    }
}

fn record_id(domain: Domain, split: u64, index: usize) -> u64 {
    (domain.code() << 48) | (split << 40) | index as u64
}

fn categorical(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Applies a technology shift to one image. Intensity and contrast act
/// about a fixed pivot, then blur, then noise drawn from `rng`.
pub fn apply_technology_shift(img: &Image, t: &TechnologyShift, rng: &mut impl Rng) -> Result<Image> {
    if t.is_identity() {
        return Ok(img.clone());
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let px = img.pixels().iter().map(|p| ((p - CONTRAST_PIVOT) * t.contrast + CONTRAST_PIVOT + t.intensity).clamp(0.0, 1.0));
    let mut out = Image::new(h, w, c, px.collect())?;
    if t.blur_sigma > 0.0 {
        let side = 2 * (2.0 * t.blur_sigma).ceil() as usize + 1;
        out = blur_with(&out, t.blur_sigma, side, side)?;
    }
    if t.noise > 0.0 {
        let px = out.pixels().iter().map(|p| (p + rng.gen_range(-t.noise..t.noise)).clamp(0.0, 1.0));
        out = Image::new(h, w, c, px.collect())?;
    }
    Ok(out)
}

struct Sample {
    record: Record,
    /// Pattern amplitude; low values sit closest to the class boundary.
    signal: f64,
}

struct Draw<'a> {
    seed: u64,
    base: &'a BaseSpec,
    domain: Domain,
    split: u64,
    families: &'a [usize],
    prevalence: &'a [f64],
    subgroup_weights: &'a [f64],
    tech: &'a TechnologyShift,
}

impl Draw<'_> {
    fn render(&self, index: usize) -> Result<Sample> {
        let mut rng = seed::rng_for(&[self.seed, self.domain.code(), self.split, index as u64]);
        let subgroup = categorical(&mut rng, self.subgroup_weights);
        let label = categorical(&mut rng, self.prevalence);
        let family = self.families[label];
        let n = self.base.image_size;
        let background = rng.gen_range(0.30..0.40) + 0.03 * subgroup as f64 / self.base.subgroups.max(2) as f64;
        let signal = rng.gen_range(0.12..0.30);
        let size = rng.gen_range(0.28..0.45);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let (cu, cv) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
        let tint: Vec<f64> = (0..self.base.channels).map(|_| rng.gen_range(0.85..1.0)).collect();
        let mut views = Vec::with_capacity(self.base.views_per_record);
        for _ in 0..self.base.views_per_record {
            let (ju, jv) = if self.base.views_per_record > 1 {
                (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1))
            } else {
                (0.0, 0.0)
            };
            let tn = self.base.texture_noise;
            let mut px = Vec::with_capacity(self.base.channels * n * n);
            for &k in &tint {
                for y in 0..n {
                    let v = 2.0 * (y as f64 + 0.5) / n as f64 - 1.0;
                    for x in 0..n {
                        let u = 2.0 * (x as f64 + 0.5) / n as f64 - 1.0;
                        let p = render_pattern(family, u, v, cu + ju, cv + jv, size, theta);
                        let noise = if tn > 0.0 { rng.gen_range(-tn..tn) } else { 0.0 };
                        px.push(background + k * signal * p + noise);
                    }
                }
            }
            let img = Image::new(n, n, self.base.channels, px)?;
            views.push(apply_technology_shift(&img, self.tech, &mut rng)?);
        }
        let id = record_id(self.domain, self.split, index);
        Ok(Sample { record: Record { id, label, clean_label: label, subgroup, views }, signal })
    }

    fn split(&self, count: usize) -> Result<Vec<Sample>> {
        (0..count).into_par_iter().map(|i| self.render(i)).collect()
    }
}

fn flip_to_other(rng: &mut impl Rng, label: usize, classes: usize) -> usize {
    (label + 1 + rng.gen_range(0..classes - 1)) % classes
}

/// Flips `round(rate·n_g)` randomly chosen labels inside each subgroup `g`.
fn plant_subgroup_noise(samples: &mut [Sample], rates: &[f64], classes: usize, key: &[u64]) {
    for (g, &rate) in rates.iter().enumerate() {
        if rate == 0.0 {
            continue;
        }
        let mut members: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].record.subgroup == g).collect();
        let mut rng = seed::rng_for(&[key, &[label_key("subgroup-noise"), g as u64]].concat());
        members.shuffle(&mut rng);
        let k = (rate * members.len() as f64).round() as usize;
        for &i in &members[..k] {
            let r = &mut samples[i].record;
            r.label = flip_to_other(&mut rng, r.label, classes);
        }
    }
}

/// Flips exactly `round(rate·n)` labels, taking the weakest-signal records
/// first (ties by id).
fn apply_behavior_noise(samples: &mut [Sample], rate: f64, classes: usize, key: &[u64]) {
    let k = (rate * samples.len() as f64).round() as usize;
    if k == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].signal.total_cmp(&samples[b].signal).then(samples[a].record.id.cmp(&samples[b].record.id)));
    let mut rng = seed::rng_for(&[key, &[label_key("behavior-noise")]].concat());
    for &i in &order[..k] {
        let r = &mut samples[i].record;
        r.label = flip_to_other(&mut rng, r.label, classes);
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn labeled_dataset(
    seed: u64,
    base: &BaseSpec,
    domain: Domain,
    sizes: [usize; 3],
    classes: usize,
    families: &[usize],
    shift: &ShiftSpec,
    downstream: bool,
) -> Result<Dataset> {
    let base_prev = base.prevalence.clone().unwrap_or_else(|| uniform(classes));
    let prevalence = if downstream { shift.population.prevalence.clone().unwrap_or(base_prev) } else { uniform(classes) };
    let weights = shift.population.subgroup_weights.clone().unwrap_or_else(|| base.subgroup_weights.clone());
    let mut ds = Dataset { name: domain.name().to_string(), classes, train: vec![], val: vec![], test: vec![] };
    for (kind, count) in SplitKind::ALL.into_iter().zip(sizes) {
        let draw = Draw {
            seed,
            base,
            domain,
            split: split_code(kind),
            families,
            prevalence: &prevalence,
            subgroup_weights: &weights,
            tech: &shift.technology,
        };
        let mut samples = draw.split(count)?;
        let key = [seed, domain.code(), split_code(kind)];
        if downstream {
            plant_subgroup_noise(&mut samples, &base.subgroup_label_noise, classes, &key);
            apply_behavior_noise(&mut samples, shift.behavior.label_noise, classes, &key);
        }
        *ds.split_mut(kind) = samples.into_iter().map(|s| s.record).collect();
    }
    Ok(ds)
}

/// Generates a full bundle. `D_u` and `D_in` share the base distribution;
/// `D_out` composes the same generator with `shift`.
pub fn generate_task(seed: u64, base: &BaseSpec, shift: &ShiftSpec, secondary: Option<&ShiftSpec>) -> Result<TaskBundle> {
    base.validate()?;
    shift.validate(base)?;
    if let Some(s) = secondary {
        s.validate(base)?;
    }
    let s = &base.sizes;
    let families: Vec<usize> = (0..base.classes).collect();
    let upstream_families: Vec<usize> = (0..base.upstream_classes).map(|c| PATTERN_FAMILIES - 1 - c).collect();
    let identity = ShiftSpec::identity();

    let prevalence = base.prevalence.clone().unwrap_or_else(|| uniform(base.classes));
    let unlabeled = Draw {
        seed,
        base,
        domain: Domain::Unlabeled,
        split: 0,
        families: &families,
        prevalence: &prevalence,
        subgroup_weights: &base.subgroup_weights,
        tech: &identity.technology,
    }
    .split(s.unlabeled)?
    .into_iter()
    .map(|s| s.record)
    .collect();

    let upstream = labeled_dataset(
        seed,
        base,
        Domain::Upstream,
        [s.upstream_train, s.upstream_val, s.upstream_test],
        base.upstream_classes,
        &upstream_families,
        &identity,
        false,
    )?;
    let d_in =
        labeled_dataset(seed, base, Domain::In, [s.in_train, s.in_val, s.in_test], base.classes, &families, &identity, true)?;
    let out_sizes = [s.out_train, s.out_val, s.out_test];
    let d_out = labeled_dataset(seed, base, Domain::Out, out_sizes, base.classes, &families, shift, true)?;
    let d_out2 = secondary
        .map(|sec| labeled_dataset(seed, base, Domain::Out2, out_sizes, base.classes, &families, sec, true))
        .transpose()?;

    Ok(TaskBundle {
        seed,
        base: base.clone(),
        shift: shift.clone(),
        secondary_shift: secondary.cloned(),
        unlabeled,
        upstream,
        d_in,
        d_out,
        d_out2,
    })
}
