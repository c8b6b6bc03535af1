//! Metrics, confidence intervals, Welch tests, matching fractions,
//! subgroup analysis and the annotation cost model.

mod cost;
mod dist;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use cost::{cost_savings, format_count, format_dollars_k, reference_table, CostReport, CostSpec, ReferenceRow};
pub use dist::{incomplete_beta, ln_gamma, t_cdf, t_quantile, t_two_sided_p};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Area under the ROC curve by the Mann–Whitney statistic; tied scores
/// count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC needs both classes present"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("AUC scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, using midranks, kept integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mid * tied_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(dyadic_ratio(twice_u, 2 * p * n))
}

/// `num / den` rounded half-to-even onto the grid `k · 2^-53`, so that
/// `1 − dyadic_ratio(num, den) == dyadic_ratio(den − num, den)` exactly.
fn dyadic_ratio(num: u128, den: u128) -> f64 {
    const SCALE: u128 = 1 << 53;
    let scaled = num * SCALE;
    let (q, r) = (scaled / den, scaled % den);
    let k = match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    };
    k as f64 / SCALE as f64
}

/// Fraction of rows whose label is among the `k` largest logits. Equal
/// logits rank the lower class index first.
pub fn topk_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(Error::shape("topk_accuracy", format!("logits {s:?} for {} labels", labels.len())));
    }
    let classes = s[1];
    if k == 0 || k > classes {
        return Err(Error::invalid(format!("k = {k} with {classes} classes")));
    }
    let mut hits = 0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid(format!("label {y} with {classes} classes")));
        }
        let row = logits.row(i);
        let rank = (0..classes).filter(|&j| row[j] > row[y] || (row[j] == row[y] && j < y)).count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    topk_accuracy(logits, labels, 1)
}

/// Row-wise argmax, lowest index on ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = logits.shape()[1];
    (0..logits.shape()[0])
        .map(|i| {
            let row = logits.row(i);
            (1..cols).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Student-t interval `mean ± t_{n−1, (1+level)/2} · s/√n`.
pub fn confidence_interval(values: &[f64], level: f64) -> Result<Interval> {
    if values.len() < 2 {
        return Err(Error::invalid(format!("confidence interval needs n >= 2, got {}", values.len())));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    let n = values.len() as f64;
    let m = mean(values);
    let s = variance(values).sqrt();
    let half = t_quantile(0.5 + 0.5 * level, n - 1.0)? * s / n.sqrt();
    Ok(Interval { mean: m, lo: m - half, hi: m + half })
}

/// Percentiles of the repeat values (linear interpolation between order
/// statistics) around the mean.
pub fn percentile_interval(values: &[f64], level: f64) -> Result<Interval> {
    if values.len() < 2 {
        return Err(Error::invalid(format!("percentile interval needs n >= 2, got {}", values.len())));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos - pos.floor());
        if i + 1 < v.len() {
            v[i] + f * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    };
    let tail = 0.5 * (1.0 - level);
    Ok(Interval { mean: mean(values), lo: q(tail), hi: q(1.0 - tail) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub p: f64,
    pub dof: f64,
}

/// Two-sample t-test without the equal-variance assumption.
///
/// When both samples have zero variance: equal means give `t = 0, p = 1`,
/// different means give `t = ±∞, p = 0`; `dof` is then `n_a + n_b − 2`.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!("Welch test needs n >= 2 per sample, got {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        let dof = na + nb - 2.0;
        return Ok(if diff == 0.0 {
            WelchResult { t: 0.0, p: 1.0, dof }
        } else {
            WelchResult { t: diff.signum() * f64::INFINITY, p: 0.0, dof }
        });
    }
    let t = diff / se2.sqrt();
    let dof = if a.len() == b.len() && va == vb {
        na + nb - 2.0
    } else {
        se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0))
    };
    Ok(WelchResult { t, p: t_two_sided_p(t, dof), dof })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Mean metric against label fraction, fractions strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCurve {
    points: Vec<CurvePoint>,
}

impl EfficiencyCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("efficiency curve has no points"));
        }
        if points.windows(2).any(|w| !(w[0].fraction < w[1].fraction)) {
            return Err(Error::invalid("curve fractions must be strictly increasing"));
        }
        if points.iter().any(|p| !p.mean.is_finite() || !p.fraction.is_finite()) {
            return Err(Error::invalid("curve values must be finite"));
        }
        Ok(EfficiencyCurve { points })
    }

    /// Curve from `(fraction, mean)` pairs without intervals.
    pub fn from_means(points: &[(f64, f64)]) -> Result<Self> {
        Self::new(points.iter().map(|&(fraction, mean)| CurvePoint { fraction, mean, lo: mean, hi: mean }).collect())
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    /// The curve built from the lower (`lo`) or upper (`hi`) interval ends.
    pub fn bound(&self, upper: bool) -> EfficiencyCurve {
        let points = self
            .points
            .iter()
            .map(|p| {
                let v = if upper { p.hi } else { p.lo };
                CurvePoint { fraction: p.fraction, mean: v, lo: v, hi: v }
            })
            .collect();
        EfficiencyCurve { points }
    }

    pub fn max_mean(&self) -> f64 {
        self.points.iter().map(|p| p.mean).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "fraction", rename_all = "snake_case")]
pub enum MatchResult {
    Fraction(f64),
    NotAttainable,
}

impl MatchResult {
    pub fn fraction(self) -> Option<f64> {
        match self {
            MatchResult::Fraction(f) => Some(f),
            MatchResult::NotAttainable => None,
        }
    }
}

/// Smallest fraction at which the piecewise-linear mean curve reaches
/// `target`.
pub fn matching_fraction(curve: &EfficiencyCurve, target: f64) -> MatchResult {
    let pts = curve.points();
    if pts[0].mean >= target {
        return MatchResult::Fraction(pts[0].fraction);
    }
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b.mean >= target {
            let t = (target - a.mean) / (b.mean - a.mean);
            return MatchResult::Fraction(a.fraction + t * (b.fraction - a.fraction));
        }
    }
    MatchResult::NotAttainable
}

/// Matching fraction on the mean curve and on the interval-bound curves.
/// The upper-bound curve reaches the target first, so it gives the low end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchInterval {
    pub mean: MatchResult,
    pub lo: MatchResult,
    pub hi: MatchResult,
}

pub fn matching_fraction_interval(curve: &EfficiencyCurve, target: f64) -> MatchInterval {
    MatchInterval {
        mean: matching_fraction(curve, target),
        lo: matching_fraction(&curve.bound(true), target),
        hi: matching_fraction(&curve.bound(false), target),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetric {
    pub group: usize,
    pub n: usize,
    pub mean: f64,
    /// Student-t interval over per-example outcomes; `None` when `n < 2`.
    pub interval: Option<Interval>,
    /// Set when `n` is below the reporting floor.
    pub small: bool,
}

/// Per-group mean of per-example outcomes (e.g. 0/1 correctness) for the
/// attribute `name` in `attributes`.
pub fn subgroup_metrics(
    outcomes: &[f64],
    attributes: &BTreeMap<String, Vec<usize>>,
    name: &str,
    floor: usize,
) -> Result<Vec<GroupMetric>> {
    let groups = attributes
        .get(name)
        .ok_or_else(|| Error::invalid(format!("unknown attribute {name:?}")))?;
    if groups.len() != outcomes.len() {
        return Err(Error::invalid(format!("{} outcomes for {} attribute values", outcomes.len(), groups.len())));
    }
    let mut by_group: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (&g, &o) in groups.iter().zip(outcomes) {
        by_group.entry(g).or_default().push(o);
    }
    Ok(by_group
        .into_iter()
        .map(|(group, vals)| GroupMetric {
            group,
            n: vals.len(),
            mean: mean(&vals),
            interval: confidence_interval(&vals, 0.95).ok(),
            small: vals.len() < floor,
        })
        .collect())
}
