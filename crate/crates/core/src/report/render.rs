//! Text and SVG renderings of a [`Report`]. All numbers go through fixed
//! precision formatting so output bytes depend only on the report.

use std::fmt::Write;

use super::{CellSummary, Report};
use crate::pipeline::{Strategy, SCENARIO_ID, SCENARIO_OOD, SCENARIO_ZERO_SHOT};

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

pub fn summary_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "report");
    let _ = writeln!(s, "manifest sha256:{}", r.manifest_hash);
    let _ = writeln!(s, "metric {}  reference {}  interval {:.0}%", r.metric, r.reference, 100.0 * r.ci_level);
    let _ = writeln!(s, "status {}", if r.is_complete() { "complete" } else { "incomplete" });

    let _ = writeln!(s, "\n[cells]");
    let _ = writeln!(s, "{:<14} {:<6} {:<24} {:>8} {:>3} {:>8} {:>8} {:>8}", "strategy", "arch", "scenario", "fraction", "n", "mean", "lo", "hi");
    for c in &r.cells {
        let _ = writeln!(
            s,
            "{:<14} {:<6} {:<24} {:>8.3} {:>3} {:>8.4} {:>8.4} {:>8.4}",
            c.strategy, c.arch, c.scenario, c.fraction, c.n, c.mean, c.lo, c.hi
        );
    }

    let _ = writeln!(s, "\n[welch]");
    let _ = writeln!(s, "{:<6} {:<14} {:<24} {:>8} {:>8} {:>8} {:>8} {:>7} {:>8}", "arch", "baseline", "scenario", "fraction", "ref", "base", "t", "dof", "p");
    for w in &r.welch {
        let _ = writeln!(
            s,
            "{:<6} {:<14} {:<24} {:>8.3} {:>8.4} {:>8.4} {:>8.3} {:>7.2} {:>8.4}",
            w.arch, w.baseline, w.scenario, w.fraction, w.reference_mean, w.baseline_mean, w.t, w.dof, w.p
        );
    }

    let _ = writeln!(s, "\n[matching]");
    for m in &r.matching {
        let _ = writeln!(
            s,
            "{} {} vs {}: target {:.4}, {}",
            m.arch,
            m.reference,
            m.baseline,
            m.target,
            match m.fraction {
                Some(f) => format!(
                    "{:.1}% of labels ({} to {})",
                    100.0 * f,
                    opt(m.lo.map(|f| 100.0 * f), 1),
                    opt(m.hi.map(|f| 100.0 * f), 1)
                ),
                None => "not reached".to_string(),
            }
        );
    }

    if !r.costs.is_empty() {
        let _ = writeln!(s, "\n[costs]");
        for c in &r.costs {
            let _ = writeln!(
                s,
                "{} vs {} {}: fraction {:.3}, saves {} samples, {:.0} hours, {}",
                c.arch,
                c.baseline,
                c.task,
                c.fraction_needed,
                crate::stats::format_count(c.samples_saved as f64),
                c.hours_saved,
                crate::stats::format_dollars_k(c.dollars_saved)
            );
        }
    }

    if !r.subgroups.is_empty() {
        let _ = writeln!(s, "\n[subgroups]");
        for g in &r.subgroups {
            let _ = writeln!(
                s,
                "{:<14} {:<6} {:<24} {:>6.3} {}={} n={} mean {:.4} ({:.4}, {:.4}){}",
                g.strategy,
                g.arch,
                g.scenario,
                g.fraction,
                g.attribute,
                g.group,
                g.n,
                g.mean,
                g.lo,
                g.hi,
                if g.small { " small" } else { "" }
            );
        }
    }

    if !r.missing.is_empty() {
        let _ = writeln!(s, "\n[missing]");
        for m in &r.missing {
            let _ = writeln!(s, "{} {} {} {:.3}: {} of {} repeats", m.strategy, m.arch, m.scenario, m.fraction, m.found, m.expected);
        }
    }

    if !r.notes.is_empty() {
        let _ = writeln!(s, "\n[notes]");
        for n in &r.notes {
            let _ = writeln!(s, "- {n}");
        }
    }
    s
}

fn color(strategy: &str) -> &'static str {
    match Strategy::parse(strategy) {
        Ok(Strategy::Random) => "#7f7f7f",
        Ok(Strategy::Supervised) => "#1f77b4",
        Ok(Strategy::Remedis) => "#2ca02c",
        Ok(Strategy::SelfTraining) => "#9467bd",
        Err(_) => "#8c564b",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 380.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;

struct Frame {
    x0: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn px(&self, fraction: f64) -> f64 {
        self.x0 + LEFT + fraction * (PANEL_W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        TOP + (self.y_hi - v) / (self.y_hi - self.y_lo) * (PANEL_H - TOP - BOTTOM)
    }
}

fn y_range<'a>(cells: impl Iterator<Item = &'a CellSummary>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in cells {
        lo = lo.min(c.lo);
        hi = hi.max(c.hi);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = ((lo - 0.02) * 20.0).floor() / 20.0;
    let hi = ((hi + 0.02) * 20.0).ceil() / 20.0;
    (lo, if hi > lo { hi } else { lo + 0.05 })
}

fn axes(s: &mut String, f: &Frame, x_ticks: &[(f64, String)], x_label: &str, y_label: &str, title: &str) {
    let (xl, xr) = (f.x0 + LEFT, f.x0 + PANEL_W - RIGHT);
    let (yt, yb) = (TOP, PANEL_H - BOTTOM);
    let _ = writeln!(s, r##"<text x="{:.1}" y="22" font-size="14" text-anchor="middle">{}</text>"##, f.x0 + PANEL_W / 2.0, escape(title));
    let _ = writeln!(s, r##"<line x1="{xl:.1}" y1="{yb:.1}" x2="{xr:.1}" y2="{yb:.1}" stroke="#000"/>"##);
    let _ = writeln!(s, r##"<line x1="{xl:.1}" y1="{yt:.1}" x2="{xl:.1}" y2="{yb:.1}" stroke="#000"/>"##);
    for (x, label) in x_ticks {
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{yb:.1}" x2="{x:.1}" y2="{:.1}" stroke="#000"/>"##, yb + 4.0);
        let _ = writeln!(s, r##"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"##, yb + 17.0, escape(label));
    }
    let steps = ((f.y_hi - f.y_lo) / 0.05).round() as usize;
    let stride = steps.div_ceil(8).max(1);
    for i in (0..=steps).step_by(stride) {
        let v = f.y_lo + 0.05 * i as f64;
        let y = f.py(v);
        let _ = writeln!(s, r##"<line x1="{:.1}" y1="{y:.1}" x2="{xl:.1}" y2="{y:.1}" stroke="#000"/>"##, xl - 4.0);
        let _ = writeln!(s, r##"<line x1="{xl:.1}" y1="{y:.1}" x2="{xr:.1}" y2="{y:.1}" stroke="#ddd"/>"##);
        let _ = writeln!(s, r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.2}</text>"##, xl - 7.0, y + 4.0);
    }
    let _ = writeln!(s, r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"##, (xl + xr) / 2.0, yb + 36.0, escape(x_label));
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"##,
        f.x0 + 16.0,
        (yt + yb) / 2.0,
        f.x0 + 16.0,
        (yt + yb) / 2.0,
        escape(y_label)
    );
}

fn open_svg(s: &mut String, panels: usize, hash: &str, title: &str) {
    let w = PANEL_W * panels.max(1) as f64;
    let _ = writeln!(s, r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{:.0}" viewBox="0 0 {w:.0} {:.0}" font-family="sans-serif">"##, PANEL_H + 20.0, PANEL_H + 20.0);
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, "<desc>manifest sha256:{hash}</desc>");
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
}

fn close_svg(s: &mut String, hash: &str) {
    let _ = writeln!(s, r##"<text x="8" y="{:.1}" font-size="10" fill="#555">manifest sha256:{hash}</text>"##, PANEL_H + 12.0);
    s.push_str("</svg>\n");
}

fn archs(r: &Report) -> Vec<String> {
    let mut a: Vec<String> = r.cells.iter().map(|c| c.arch.clone()).collect();
    a.sort();
    a.dedup();
    a
}

fn strategies(r: &Report) -> Vec<String> {
    let mut s: Vec<String> = r.cells.iter().map(|c| c.strategy.clone()).collect();
    s.sort_by_key(|x| Strategy::parse(x).map(|k| k as usize).unwrap_or(usize::MAX));
    s.dedup();
    s
}

/// Efficiency curves with shaded interval bands, one panel per
/// architecture. Red dashed lines mark where the reference reaches each
/// baseline's full-fraction mean.
pub fn curve_chart_svg(r: &Report) -> String {
    let archs = archs(r);
    let mut s = String::new();
    open_svg(&mut s, archs.len(), &r.manifest_hash, "label efficiency under distribution shift");
    for (i, arch) in archs.iter().enumerate() {
        let curve_cells = |st: &str| -> Vec<&CellSummary> {
            r.cells
                .iter()
                .filter(|c| c.arch == *arch && c.strategy == st)
                .filter(|c| c.scenario == SCENARIO_ZERO_SHOT || c.scenario == SCENARIO_OOD)
                .collect()
        };
        let all: Vec<&CellSummary> = strategies(r).iter().flat_map(|st| curve_cells(st)).collect();
        let (y_lo, y_hi) = y_range(all.iter().copied());
        let f = Frame { x0: PANEL_W * i as f64, y_lo, y_hi };
        let mut fractions: Vec<f64> = all.iter().map(|c| c.fraction).collect();
        fractions.sort_by(f64::total_cmp);
        fractions.dedup();
        let ticks: Vec<(f64, String)> = fractions.iter().map(|&x| (f.px(x), format!("{:.0}", 100.0 * x))).collect();
        axes(&mut s, &f, &ticks, "OOD label fraction (%)", &format!("OOD {}", r.metric), &format!("{arch}: {} vs baselines", r.reference));

        for (k, st) in strategies(r).iter().enumerate() {
            let pts = curve_cells(st);
            if pts.is_empty() {
                continue;
            }
            let c = color(st);
            let mut band = String::new();
            for p in &pts {
                let _ = write!(band, "{:.2},{:.2} ", f.px(p.fraction), f.py(p.hi));
            }
            for p in pts.iter().rev() {
                let _ = write!(band, "{:.2},{:.2} ", f.px(p.fraction), f.py(p.lo));
            }
            let _ = writeln!(s, r##"<polygon points="{}" fill="{c}" fill-opacity="0.18" stroke="none"/>"##, band.trim_end());
            let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", f.px(p.fraction), f.py(p.mean))).collect();
            let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"##, line.join(" "));
            for p in &pts {
                let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"##, f.px(p.fraction), f.py(p.mean));
            }
            let ly = TOP + 8.0 + 16.0 * k as f64;
            let lx = f.x0 + PANEL_W - RIGHT - 130.0;
            let _ = writeln!(s, r##"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="2"/>"##, lx + 18.0);
            let _ = writeln!(s, r##"<text x="{:.1}" y="{:.1}" font-size="11">{}</text>"##, lx + 23.0, ly + 4.0, escape(st));
        }

        for m in r.matching.iter().filter(|m| m.arch == *arch) {
            let Some(frac) = m.fraction else { continue };
            let (x, y) = (f.px(frac), f.py(m.target));
            let _ = writeln!(s, r##"<line x1="{:.2}" y1="{y:.2}" x2="{x:.2}" y2="{y:.2}" stroke="#d62728" stroke-dasharray="5,4"/>"##, f.px(0.0));
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{y:.2}" x2="{x:.2}" y2="{:.2}" stroke="#d62728" stroke-dasharray="5,4"/>"##, PANEL_H - BOTTOM);
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{:.2}" font-size="11" fill="#d62728">{:.1}% matches {}</text>"##,
                x + 4.0,
                y - 6.0,
                100.0 * frac,
                escape(&m.baseline)
            );
        }
    }
    close_svg(&mut s, &r.manifest_hash);
    s
}

/// In-distribution and zero-shot means with interval whiskers, one panel
/// per architecture.
pub fn bar_chart_svg(r: &Report) -> String {
    let archs = archs(r);
    let strategies = strategies(r);
    let mut s = String::new();
    open_svg(&mut s, archs.len(), &r.manifest_hash, "in-distribution and zero-shot performance");
    let groups = [(SCENARIO_ID, "in-distribution"), (SCENARIO_ZERO_SHOT, "zero-shot OOD")];
    for (i, arch) in archs.iter().enumerate() {
        let cells: Vec<&CellSummary> = r
            .cells
            .iter()
            .filter(|c| c.arch == *arch && groups.iter().any(|g| g.0 == c.scenario))
            .collect();
        let (y_lo, y_hi) = y_range(cells.iter().copied());
        let f = Frame { x0: PANEL_W * i as f64, y_lo, y_hi };
        let slot = 1.0 / groups.len() as f64;
        let ticks: Vec<(f64, String)> = groups
            .iter()
            .enumerate()
            .map(|(g, (_, label))| (f.px(slot * (g as f64 + 0.5)), label.to_string()))
            .collect();
        axes(&mut s, &f, &ticks, "scenario", &r.metric, &format!("{arch}: scenario means"));
        let bar = slot * 0.8 / strategies.len().max(1) as f64;
        for (g, (scenario, _)) in groups.iter().enumerate() {
            for (k, st) in strategies.iter().enumerate() {
                let Some(c) = cells.iter().find(|c| c.scenario == *scenario && c.strategy == *st) else { continue };
                let x = slot * (g as f64 + 0.1) + bar * k as f64;
                let (xl, xr) = (f.px(x), f.px(x + bar));
                let (yt, yb) = (f.py(c.mean), PANEL_H - BOTTOM);
                let _ = writeln!(
                    s,
                    r##"<rect x="{xl:.2}" y="{yt:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"##,
                    xr - xl - 2.0,
                    (yb - yt).max(0.0),
                    color(st)
                );
                let xm = (xl + xr - 2.0) / 2.0;
                let _ = writeln!(s, r##"<line x1="{xm:.2}" y1="{:.2}" x2="{xm:.2}" y2="{:.2}" stroke="#000"/>"##, f.py(c.hi), f.py(c.lo));
            }
        }
        for (k, st) in strategies.iter().enumerate() {
            let ly = TOP + 8.0 + 16.0 * k as f64;
            let lx = f.x0 + PANEL_W - RIGHT - 130.0;
            let _ = writeln!(s, r##"<rect x="{lx:.1}" y="{:.1}" width="12" height="10" fill="{}"/>"##, ly - 5.0, color(st));
            let _ = writeln!(s, r##"<text x="{:.1}" y="{:.1}" font-size="11">{}</text>"##, lx + 17.0, ly + 4.0, escape(st));
        }
    }
    close_svg(&mut s, &r.manifest_hash);
    s
}
