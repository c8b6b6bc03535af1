//! Annotation cost model: dataset totals and savings from needing only a
//! fraction of the labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub task: String,
    pub images: u64,
    pub seconds_per_image: f64,
    pub hourly_wage: f64,
    /// Quoted cost per image; when absent the wage-derived cost is used.
    #[serde(default)]
    pub cost_per_image: Option<f64>,
}

impl CostSpec {
    pub fn new(task: &str, images: u64, seconds_per_image: f64, hourly_wage: f64, cost_per_image: Option<f64>) -> Self {
        CostSpec { task: task.to_string(), images, seconds_per_image, hourly_wage, cost_per_image }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{}: {name} must be finite and >= 0, got {v}", self.task)))
            }
        };
        nonneg("seconds_per_image", self.seconds_per_image)?;
        nonneg("hourly_wage", self.hourly_wage)?;
        if let Some(c) = self.cost_per_image {
            nonneg("cost_per_image", c)?;
        }
        Ok(())
    }

    /// `wage · seconds / 3600`.
    pub fn derived_cost_per_image(&self) -> f64 {
        self.hourly_wage * self.seconds_per_image / 3600.0
    }

    pub fn effective_cost_per_image(&self) -> f64 {
        self.cost_per_image.unwrap_or_else(|| self.derived_cost_per_image())
    }

    pub fn total_hours(&self) -> f64 {
        self.images as f64 * self.seconds_per_image / 3600.0
    }

    pub fn total_dollars(&self) -> f64 {
        self.images as f64 * self.effective_cost_per_image()
    }

    /// Savings when `saved` images need no annotation.
    pub fn savings_for_count(&self, saved: u64, fraction_needed: f64) -> CostReport {
        CostReport {
            task: self.task.clone(),
            fraction_needed,
            samples_saved: saved,
            hours_saved: saved as f64 * self.seconds_per_image / 3600.0,
            dollars_saved: saved as f64 * self.effective_cost_per_image(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub task: String,
    pub fraction_needed: f64,
    pub samples_saved: u64,
    pub hours_saved: f64,
    pub dollars_saved: f64,
}

/// Savings when only `fraction_needed` of the images must be labeled.
pub fn cost_savings(spec: &CostSpec, fraction_needed: f64) -> Result<CostReport> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&fraction_needed) {
        return Err(Error::invalid(format!("fraction_needed {fraction_needed} outside [0, 1]")));
    }
    let saved = (spec.images as f64 * (1.0 - fraction_needed)).round() as u64;
    Ok(spec.savings_for_count(saved, fraction_needed))
}

/// Whole thousands of dollars, truncated: `49_540.92 → "$49K"`.
pub fn format_dollars_k(dollars: f64) -> String {
    format!("${}K", (dollars / 1000.0).floor() as i64)
}

/// Nearest whole number with thousands separators: `2984.0 → "2,984"`.
pub fn format_count(value: f64) -> String {
    let n = value.round() as i64;
    let digits = n.unsigned_abs().to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    if n < 0 {
        out.insert(0, '-');
    }
    out
}

/// One column of the published clinical cost table: inputs plus the values
/// it displays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub spec: CostSpec,
    /// Exact dataset cost quoted in the accompanying text.
    pub stated_total: f64,
    pub shown_hours: u64,
    pub shown_total_k: u64,
    pub shown_saved_percent: u64,
    pub shown_saved_count: u64,
    pub shown_hours_saved: u64,
    pub shown_saved_k: u64,
}

fn reference(
    task: &str,
    images: u64,
    secs: f64,
    wage: f64,
    cost: f64,
    stated_total: f64,
    shown: [u64; 6],
) -> ReferenceRow {
    ReferenceRow {
        spec: CostSpec::new(task, images, secs, wage, Some(cost)),
        stated_total,
        shown_hours: shown[0],
        shown_total_k: shown[1],
        shown_saved_percent: shown[2],
        shown_saved_count: shown[3],
        shown_hours_saved: shown[4],
        shown_saved_k: shown[5],
    }
}

/// The six published task rows.
pub fn reference_table() -> Vec<ReferenceRow> {
    vec![
        reference("T1", 17_322, 60.0, 172.0, 2.86, 49_540.0, [289, 49, 67, 11_578, 193, 33]),
        reference("T2", 2_524, 345.0, 147.0, 14.0, 35_336.0, [242, 35, 93, 2_342, 224, 33]),
        reference("T3", 27_978, 122.0, 205.0, 6.95, 194_369.0, [948, 194, 83, 23_278, 789, 162]),
        reference("T4", 17_904, 600.0, 138.0, 23.0, 411_792.0, [2_984, 411, 94, 16_872, 2_812, 385]),
        reference("T5", 3_873, 600.0, 138.0, 23.0, 89_079.0, [645, 89, 86, 3_325, 554, 76]),
        reference("T6", 17_178, 360.0, 205.0, 20.5, 352_149.0, [1_718, 352, 91, 15_689, 1_569, 322]),
    ]
}

impl ReferenceRow {
    /// Places where arithmetic on the row's inputs does not give the value
    /// the table displays, in display units.
    pub fn discrepancies(&self) -> Vec<String> {
        let s = &self.spec;
        let mut notes = Vec::new();
        let mut check = |what: &str, computed: f64, shown: u64, unit: &str| {
            if computed.round() as u64 != shown && computed.floor() as u64 != shown {
                notes.push(format!("{}: {what} computes to {computed:.2}{unit}, table shows {shown}{unit}", s.task));
            } else if computed.round() as u64 != shown || computed.floor() as u64 != shown {
                let how = if computed.floor() as u64 == shown { "truncated" } else { "rounded" };
                notes.push(format!("{}: {what} {computed:.2}{unit} is {how} to {shown}{unit}", s.task));
            }
        };
        check("dataset hours", s.total_hours(), self.shown_hours, "h");
        check("dataset cost", s.total_dollars() / 1000.0, self.shown_total_k, "K");
        let saved = s.savings_for_count(self.shown_saved_count, 0.0);
        check("hours saved", saved.hours_saved, self.shown_hours_saved, "h");
        check("cost saved", saved.dollars_saved / 1000.0, self.shown_saved_k, "K");
        let quoted = s.cost_per_image.unwrap_or(f64::NAN);
        let derived = s.derived_cost_per_image();
        if (s.images as f64 * quoted - self.stated_total).abs() >= 1.0 {
            notes.push(format!(
                "{}: stated total ${} is not images × quoted ${quoted} (= ${:.2}); images × wage-derived ${derived:.4} = ${:.2}",
                s.task,
                self.stated_total,
                s.images as f64 * quoted,
                s.images as f64 * derived,
            ));
        }
        notes
    }
}
