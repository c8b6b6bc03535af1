//! Aggregation of protocol metric rows into curves, tests, matching
//! fractions, cost estimates and subgroup tables, plus their CSV, text and
//! SVG renderings.

mod render;
mod results;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use render::{bar_chart_svg, curve_chart_svg, summary_text};
pub use results::{
    load_results, manifest_hash, read_csv, read_timings, write_csv, write_results, Results, CONFIG_FILE,
    FAILURES_FILE, GRIDS_FILE, MANIFEST_FILE, METRICS_FILE, PRETRAIN_FILE, SUBGROUPS_FILE, TIMINGS_FILE,
};

use crate::config::ReportConfig;
use crate::error::Result;
use crate::pipeline::{scenario_rank, Strategy, SCENARIO_ID, SCENARIO_OOD, SCENARIO_ZERO_SHOT};
use crate::stats::{
    self, confidence_interval, cost_savings, matching_fraction_interval, welch_ttest, CostSpec, CurvePoint,
    EfficiencyCurve, MatchResult,
};

/// Mean and interval of one (strategy, arch, scenario, fraction) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub manifest: String,
    pub strategy: String,
    pub arch: String,
    pub scenario: String,
    pub fraction: f64,
    pub n: usize,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchRow {
    pub manifest: String,
    pub arch: String,
    pub reference: String,
    pub baseline: String,
    pub scenario: String,
    pub fraction: f64,
    pub reference_mean: f64,
    pub baseline_mean: f64,
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRow {
    pub manifest: String,
    pub arch: String,
    pub reference: String,
    pub baseline: String,
    /// Baseline mean at the full label fraction.
    pub target: f64,
    pub fraction: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub manifest: String,
    pub arch: String,
    pub baseline: String,
    pub task: String,
    pub fraction_needed: f64,
    pub samples_saved: u64,
    pub hours_saved: f64,
    pub dollars_saved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSummary {
    pub manifest: String,
    pub strategy: String,
    pub arch: String,
    pub scenario: String,
    pub fraction: f64,
    pub attribute: String,
    pub group: usize,
    /// Test records in the group.
    pub n: usize,
    pub repeats: usize,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub small: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCell {
    pub manifest: String,
    pub strategy: String,
    pub arch: String,
    pub scenario: String,
    pub fraction: f64,
    pub found: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub manifest_hash: String,
    pub metric: String,
    pub reference: String,
    pub ci_level: f64,
    pub cells: Vec<CellSummary>,
    pub welch: Vec<WelchRow>,
    pub matching: Vec<MatchRow>,
    pub costs: Vec<CostRow>,
    pub subgroups: Vec<SubgroupSummary>,
    pub missing: Vec<MissingCell>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    /// OOD efficiency curve of one strategy: zero-shot at fraction 0, then
    /// the fine-tuned cells.
    pub fn curve(&self, strategy: &str, arch: &str) -> Option<EfficiencyCurve> {
        let points: Vec<CurvePoint> = self
            .cells
            .iter()
            .filter(|c| c.strategy == strategy && c.arch == arch && c.scenario != SCENARIO_ID)
            .filter(|c| c.scenario == SCENARIO_ZERO_SHOT || c.scenario == SCENARIO_OOD)
            .map(|c| CurvePoint { fraction: c.fraction, mean: c.mean, lo: c.lo, hi: c.hi })
            .collect();
        EfficiencyCurve::new(points).ok()
    }
}

type CellKey = (usize, String, usize, u64);

fn cell_key(strategy: &str, arch: &str, scenario: &str, fraction: f64) -> CellKey {
    let s = Strategy::parse(strategy).map(|s| s as usize).unwrap_or(usize::MAX);
    (s, arch.to_string(), scenario_rank(scenario), fraction.to_bits())
}

fn mean_interval(values: &[f64], level: f64) -> (f64, f64, f64) {
    match confidence_interval(values, level) {
        Ok(ci) => (ci.mean, ci.lo, ci.hi),
        Err(_) => {
            let m = stats::mean(values);
            (m, m, m)
        }
    }
}

/// Aggregates `results`. Cells with fewer rows than the manifest's repeat
/// count are listed as missing and excluded from the tests.
pub fn build_report(results: &Results, cfg: &ReportConfig, costs: &[CostSpec]) -> Result<Report> {
    let hash = results.manifest_hash.clone();
    let spec = &results.manifest.spec;
    let metric = cfg.metric.as_str();

    let mut values: BTreeMap<CellKey, (String, String, String, f64, Vec<f64>)> = BTreeMap::new();
    for r in results.rows.iter().filter(|r| r.metric_name == metric) {
        values
            .entry(cell_key(&r.strategy, &r.arch, &r.scenario, r.fraction))
            .or_insert_with(|| (r.strategy.clone(), r.arch.clone(), r.scenario.clone(), r.fraction, Vec::new()))
            .4
            .push(r.value);
    }

    let mut expected: Vec<(String, String, String, f64)> = Vec::new();
    for s in &spec.strategies {
        for a in &spec.archs {
            let (s, a) = (s.as_str().to_string(), a.as_str().to_string());
            expected.push((s.clone(), a.clone(), SCENARIO_ID.into(), 1.0));
            for &f in &spec.fractions {
                let scenario = if f == 0.0 { SCENARIO_ZERO_SHOT } else { SCENARIO_OOD };
                expected.push((s.clone(), a.clone(), scenario.into(), f));
            }
        }
    }
    let mut missing = Vec::new();
    let mut complete: BTreeSet<CellKey> = BTreeSet::new();
    for (s, a, sc, f) in &expected {
        let key = cell_key(s, a, sc, *f);
        let found = values.get(&key).map_or(0, |v| v.4.len());
        if found < spec.repeats.max(2) {
            missing.push(MissingCell {
                manifest: hash.clone(),
                strategy: s.clone(),
                arch: a.clone(),
                scenario: sc.clone(),
                fraction: *f,
                found,
                expected: spec.repeats,
            });
        } else {
            complete.insert(key);
        }
    }

    let cells: Vec<CellSummary> = values
        .iter()
        .filter(|(_, v)| v.4.len() >= 2)
        .map(|(_, (s, a, sc, f, v))| {
            let (mean, lo, hi) = mean_interval(v, cfg.ci_level);
            CellSummary {
                manifest: hash.clone(),
                strategy: s.clone(),
                arch: a.clone(),
                scenario: sc.clone(),
                fraction: *f,
                n: v.len(),
                mean,
                lo,
                hi,
            }
        })
        .collect();

    let reference = cfg.reference.clone();
    let baselines: Vec<String> = spec
        .strategies
        .iter()
        .map(|s| s.as_str().to_string())
        .filter(|s| *s != reference)
        .collect();
    let mut welch = Vec::new();
    let mut matching = Vec::new();
    let mut cost_rows = Vec::new();
    let reference_listed = spec.strategies.iter().any(|s| s.as_str() == reference);
    for arch in spec.archs.iter().map(|a| a.as_str()) {
        if !reference_listed {
            break;
        }
        for base in &baselines {
            let mut scenarios = vec![(SCENARIO_ID, 1.0)];
            for &f in &spec.fractions {
                scenarios.push((if f == 0.0 { SCENARIO_ZERO_SHOT } else { SCENARIO_OOD }, f));
            }
            for (sc, f) in scenarios {
                let (kr, kb) = (cell_key(&reference, arch, sc, f), cell_key(base, arch, sc, f));
                if !(complete.contains(&kr) && complete.contains(&kb)) {
                    continue;
                }
                let (a, b) = (&values[&kr].4, &values[&kb].4);
                let w = welch_ttest(a, b)?;
                welch.push(WelchRow {
                    manifest: hash.clone(),
                    arch: arch.into(),
                    reference: reference.clone(),
                    baseline: base.clone(),
                    scenario: sc.into(),
                    fraction: f,
                    reference_mean: stats::mean(a),
                    baseline_mean: stats::mean(b),
                    t: w.t,
                    dof: w.dof,
                    p: w.p,
                });
            }

            let ood_complete = spec.fractions.iter().all(|&f| {
                let sc = if f == 0.0 { SCENARIO_ZERO_SHOT } else { SCENARIO_OOD };
                complete.contains(&cell_key(&reference, arch, sc, f))
            });
            let target_key = cell_key(base, arch, SCENARIO_OOD, 1.0);
            if !ood_complete || !complete.contains(&target_key) {
                continue;
            }
            let target = stats::mean(&values[&target_key].4);
            let cells_ref: Vec<CurvePoint> = spec
                .fractions
                .iter()
                .map(|&f| {
                    let sc = if f == 0.0 { SCENARIO_ZERO_SHOT } else { SCENARIO_OOD };
                    let (mean, lo, hi) = mean_interval(&values[&cell_key(&reference, arch, sc, f)].4, cfg.ci_level);
                    CurvePoint { fraction: f, mean, lo, hi }
                })
                .collect();
            let curve = EfficiencyCurve::new(cells_ref)?;
            let m = matching_fraction_interval(&curve, target);
            matching.push(MatchRow {
                manifest: hash.clone(),
                arch: arch.into(),
                reference: reference.clone(),
                baseline: base.clone(),
                target,
                fraction: m.mean.fraction(),
                lo: m.lo.fraction(),
                hi: m.hi.fraction(),
            });
            if let MatchResult::Fraction(f) = m.mean {
                for c in costs {
                    let r = cost_savings(c, f)?;
                    cost_rows.push(CostRow {
                        manifest: hash.clone(),
                        arch: arch.into(),
                        baseline: base.clone(),
                        task: r.task,
                        fraction_needed: r.fraction_needed,
                        samples_saved: r.samples_saved,
                        hours_saved: r.hours_saved,
                        dollars_saved: r.dollars_saved,
                    });
                }
            }
        }
    }

    let mut groups: BTreeMap<(CellKey, String, usize), (usize, Vec<f64>, (String, String, String, f64))> =
        BTreeMap::new();
    for r in &results.subgroups {
        let e = groups
            .entry((cell_key(&r.strategy, &r.arch, &r.scenario, r.fraction), r.attribute.clone(), r.group))
            .or_insert_with(|| (0, Vec::new(), (r.strategy.clone(), r.arch.clone(), r.scenario.clone(), r.fraction)));
        e.0 = e.0.max(r.n);
        e.1.push(r.value);
    }
    let subgroups = groups
        .into_iter()
        .map(|((_, attribute, group), (n, v, (strategy, arch, scenario, fraction)))| {
            let (mean, lo, hi) = mean_interval(&v, cfg.ci_level);
            SubgroupSummary {
                manifest: hash.clone(),
                strategy,
                arch,
                scenario,
                fraction,
                attribute,
                group,
                n,
                repeats: v.len(),
                mean,
                lo,
                hi,
                small: n < cfg.subgroup_floor,
            }
        })
        .collect();

    let mut notes = results.manifest.notes.clone();
    if !reference_listed {
        notes.push(format!("reference strategy {reference:?} is not part of this run; no tests computed"));
    }
    for f in &results.failures {
        notes.push(format!("failed cell {}/{}/{}@{}#{}: {}", f.strategy, f.arch, f.scenario, f.fraction, f.repeat, f.error));
    }

    Ok(Report {
        manifest_hash: hash,
        metric: metric.into(),
        reference,
        ci_level: cfg.ci_level,
        cells,
        welch,
        matching,
        costs: cost_rows,
        subgroups,
        missing,
        notes,
    })
}

pub const REPORT_FILES: [&str; 10] = [
    "report_cells.csv",
    "report_welch.csv",
    "report_matching.csv",
    "report_costs.csv",
    "report_subgroups.csv",
    "report_missing.csv",
    "report.json",
    "summary.txt",
    "efficiency.svg",
    "scenarios.svg",
];

/// Writes the report's tables, summary and charts into `dir`. Output is a
/// pure function of the report, so unchanged inputs give identical bytes.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join(REPORT_FILES[0]), &report.cells)?;
    write_csv(&dir.join(REPORT_FILES[1]), &report.welch)?;
    write_csv(&dir.join(REPORT_FILES[2]), &report.matching)?;
    write_csv(&dir.join(REPORT_FILES[3]), &report.costs)?;
    write_csv(&dir.join(REPORT_FILES[4]), &report.subgroups)?;
    write_csv(&dir.join(REPORT_FILES[5]), &report.missing)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join(REPORT_FILES[6]), json)?;
    fs::write(dir.join(REPORT_FILES[7]), summary_text(report))?;
    fs::write(dir.join(REPORT_FILES[8]), curve_chart_svg(report))?;
    fs::write(dir.join(REPORT_FILES[9]), bar_chart_svg(report))?;
    Ok(())
}
