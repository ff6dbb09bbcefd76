//! Declarative chart specifications and seeded spec sampling.
//!
//! A [`ChartSpec`] is the ground truth for one chart: the rendered image and
//! every question answer derive from it. There is deliberately no field for
//! per-point value labels, so a spec cannot describe an annotated chart.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::SeededRng;
use crate::topics::{TopicCatalog, TopicProfile};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown topic {0:?}: not in the configured topic list")]
    UnknownTopic(String),
    #[error("unknown chart type {0:?}")]
    UnknownChartType(String),
    #[error("unknown difficulty {0:?}")]
    UnknownDifficulty(String),
}

/// The seven chart types, in benchmark column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartType {
    Box,
    Area,
    Radar,
    Scatter,
    Bar,
    Line,
    Combo,
}

impl ChartType {
    pub const ALL: [ChartType; 7] = [
        ChartType::Box,
        ChartType::Area,
        ChartType::Radar,
        ChartType::Scatter,
        ChartType::Bar,
        ChartType::Line,
        ChartType::Combo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChartType::Box => "box",
            ChartType::Area => "area",
            ChartType::Radar => "radar",
            ChartType::Scatter => "scatter",
            ChartType::Bar => "bar",
            ChartType::Line => "line",
            ChartType::Combo => "combo",
        }
    }

    /// Types laid out over `x_categories`.
    pub fn is_categorical(self) -> bool {
        !matches!(self, ChartType::Box | ChartType::Scatter)
    }
}

impl fmt::Display for ChartType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChartType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChartType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ModelError::UnknownChartType(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mark {
    #[serde(rename = "bar")]
    Bar,
    #[serde(rename = "line")]
    Line,
    #[serde(rename = "point")]
    Point,
    #[serde(rename = "area-fill")]
    AreaFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl FromStr for Difficulty {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(ModelError::UnknownDifficulty(other.to_string())),
        }
    }
}

/// One observation. Categorical charts use `label`, scatter uses `x`, box
/// charts carry bare raw values (`y` only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    pub y: f64,
}

impl DataPoint {
    pub fn category(label: impl Into<String>, y: f64) -> Self {
        Self {
            label: Some(label.into()),
            x: None,
            y,
        }
    }

    pub fn xy(x: f64, y: f64) -> Self {
        Self {
            label: None,
            x: Some(x),
            y,
        }
    }

    pub fn sample(y: f64) -> Self {
        Self {
            label: None,
            x: None,
            y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub name: String,
    pub mark: Mark,
    pub points: Vec<DataPoint>,
}

impl SeriesSpec {
    pub fn value_at(&self, category: &str) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.label.as_deref() == Some(category))
            .map(|p| p.y)
    }

    pub fn raw_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub label: String,
    pub min: f64,
    pub max: f64,
    pub tick_interval: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl AxisSpec {
    /// Tick positions from `min` to `max`, computed in decimal when the axis
    /// parameters are short decimals so labels never show float noise.
    pub fn ticks(&self) -> Vec<f64> {
        // NaN compares as neither, so it lands here too
        let ascending = |a: f64, b: f64| a.partial_cmp(&b) == Some(std::cmp::Ordering::Less);
        if !ascending(0.0, self.tick_interval) || !ascending(self.min, self.max) {
            return Vec::new();
        }
        let count = ((self.max - self.min) / self.tick_interval + 1e-9).floor();
        if !count.is_finite() || count > 1000.0 {
            return Vec::new();
        }
        let count = count as i64;
        if let Some(scale) = decimal_scale(&[self.min, self.tick_interval]) {
            let factor = 10f64.powi(scale);
            let min_u = (self.min * factor).round() as i64;
            let tick_u = (self.tick_interval * factor).round() as i64;
            (0..=count).map(|i| (min_u + i * tick_u) as f64 / factor).collect()
        } else {
            (0..=count).map(|i| self.min + i as f64 * self.tick_interval).collect()
        }
    }

    pub fn tick_labels(&self) -> Vec<String> {
        self.ticks().into_iter().map(format_tick).collect()
    }

    /// Axis title with the unit in parentheses.
    pub fn title(&self) -> String {
        match &self.unit {
            Some(u) if !u.is_empty() => format!("{} ({})", self.label, u),
            _ => self.label.clone(),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    /// Position of `v` as a fraction of the axis span.
    pub fn fraction(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }
}

/// Smallest power of ten (up to 10^9) that makes every value an integer.
fn decimal_scale(values: &[f64]) -> Option<i32> {
    (0..=9).find(|&d| {
        let f = 10f64.powi(d);
        values.iter().all(|v| {
            let s = v * f;
            s.abs() < 9.0e15 && (s - s.round()).abs() <= 1e-9 * s.abs().max(1.0)
        })
    })
}

/// Tick label text: shortest round-trip decimal, no negative zero.
pub fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

fn group_thousands(s: &str) -> String {
    let (sign, rest) = match s.strip_prefix('-') {
        Some(r) => ("-", r),
        None => ("", s),
    };
    let (int, frac) = match rest.find('.') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, ""),
    };
    let mut out = String::with_capacity(s.len() + int.len() / 3);
    for (i, ch) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    format!("{sign}{out}{frac}")
}

/// Every exact textual rendering of `v` the annotation audit recognises:
/// shortest decimal, fixed 1-3 decimals, thousands-grouped, each optionally
/// suffixed with `%`. Rounded renderings are excluded because they denote a
/// different number.
pub fn number_formats(v: f64) -> Vec<String> {
    let mut base = vec![format_tick(v)];
    for d in 1..=3 {
        let s = format!("{v:.d$}");
        if s.parse::<f64>().ok() == Some(v) {
            base.push(s);
        }
    }
    if v.abs() >= 1000.0 {
        let grouped: Vec<String> = base.iter().map(|s| group_thousands(s)).collect();
        base.extend(grouped);
    }
    let pct: Vec<String> = base.iter().map(|s| format!("{s}%")).collect();
    base.extend(pct);
    base.sort();
    base.dedup();
    base
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub schema_version: u32,
    pub id: String,
    pub chart_type: ChartType,
    pub topic: String,
    pub title: String,
    #[serde(default)]
    pub x_categories: Vec<String>,
    pub series: Vec<SeriesSpec>,
    pub y_axis: AxisSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_axis_secondary: Option<AxisSpec>,
    /// Horizontal value axis; scatter charts only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_axis: Option<AxisSpec>,
    pub style_seed: u64,
}

impl ChartSpec {
    /// Axis a series is measured against: combo line series bind to the
    /// secondary axis when one exists.
    pub fn value_axis(&self, series: &SeriesSpec) -> &AxisSpec {
        match (&self.y_axis_secondary, series.mark) {
            (Some(sec), Mark::Line) if self.chart_type == ChartType::Combo => sec,
            _ => &self.y_axis,
        }
    }

    pub fn series_named(&self, name: &str) -> Option<&SeriesSpec> {
        self.series.iter().find(|s| s.name == name)
    }

    /// Every number a reader could be asked to estimate: raw y values,
    /// scatter x values, and box summary statistics.
    pub fn data_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.series {
            for p in &s.points {
                out.push(p.y);
                if let Some(x) = p.x {
                    out.push(x);
                }
            }
            if self.chart_type == ChartType::Box && !s.points.is_empty() {
                let b = box_stats(&s.raw_values());
                out.extend([b.lower_whisker, b.q1, b.median, b.q3, b.upper_whisker]);
            }
        }
        out
    }

    /// Text the renderer is allowed to print.
    pub fn permitted_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.title.is_empty() {
            out.push(self.title.clone());
        }
        for axis in [Some(&self.y_axis), self.y_axis_secondary.as_ref(), self.x_axis.as_ref()]
            .into_iter()
            .flatten()
        {
            out.push(axis.title());
            out.extend(axis.tick_labels());
        }
        out.extend(self.x_categories.iter().cloned());
        out.extend(self.series.iter().map(|s| s.name.clone()));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, rule: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            rule: rule.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "- {v}")?;
        }
        Ok(())
    }
}

fn validate_axis(report: &mut ValidationReport, field: &str, axis: &AxisSpec) -> bool {
    let before = report.violations.len();
    if !(axis.min.is_finite() && axis.max.is_finite() && axis.tick_interval.is_finite()) {
        report.push(field, "axis bounds and tick interval must be finite");
        return false;
    }
    if axis.min >= axis.max {
        report.push(field, format!("min {} must be below max {}", axis.min, axis.max));
    }
    if axis.tick_interval <= 0.0 {
        report.push(field, "tick_interval must be positive");
    } else if axis.min < axis.max {
        let ratio = (axis.max - axis.min) / axis.tick_interval;
        if !(2.0 - 1e-9..=20.0 + 1e-9).contains(&ratio) {
            report.push(
                field,
                format!("(max - min) / tick_interval = {ratio} must lie in [2, 20]"),
            );
        }
    }
    report.violations.len() == before
}

fn expected_mark_ok(chart_type: ChartType, mark: Mark) -> bool {
    match chart_type {
        ChartType::Bar => mark == Mark::Bar,
        ChartType::Line | ChartType::Radar => mark == Mark::Line,
        ChartType::Area => mark == Mark::AreaFill,
        ChartType::Scatter | ChartType::Box => mark == Mark::Point,
        ChartType::Combo => matches!(mark, Mark::Bar | Mark::Line),
    }
}

/// Checks every structural invariant of a spec. Violations are returned as
/// data; an empty report means the chart spec is usable.
pub fn validate_spec(spec: &ChartSpec) -> ValidationReport {
    let mut r = ValidationReport::default();

    if spec.schema_version != SCHEMA_VERSION {
        r.push(
            "schema_version",
            format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                spec.schema_version
            ),
        );
    }
    if spec.id.trim().is_empty() {
        r.push("id", "id must be non-empty");
    }
    if spec.series.is_empty() {
        r.push("series", "at least one series is required");
    }

    let y_ok = validate_axis(&mut r, "y_axis", &spec.y_axis);
    let sec_ok = match &spec.y_axis_secondary {
        Some(a) => {
            if spec.chart_type != ChartType::Combo {
                r.push("y_axis_secondary", "secondary axis is only allowed on combo charts");
            }
            validate_axis(&mut r, "y_axis_secondary", a)
        }
        None => true,
    };
    let x_ok = match (&spec.x_axis, spec.chart_type) {
        (Some(a), ChartType::Scatter) => validate_axis(&mut r, "x_axis", a),
        (None, ChartType::Scatter) => {
            r.push("x_axis", "scatter requires an x axis");
            false
        }
        (Some(_), _) => {
            r.push("x_axis", "x axis is only allowed on scatter charts");
            false
        }
        (None, _) => true,
    };

    let categorical = spec.chart_type.is_categorical();
    if categorical {
        let mut seen = HashSet::new();
        for (i, c) in spec.x_categories.iter().enumerate() {
            if c.trim().is_empty() {
                r.push(format!("x_categories[{i}]"), "category label must be non-empty");
            }
            if !seen.insert(c.as_str()) {
                r.push(format!("x_categories[{i}]"), format!("duplicate category {c:?}"));
            }
        }
        if spec.x_categories.is_empty() {
            r.push(
                "x_categories",
                format!("{} requires at least one category", spec.chart_type),
            );
        }
    } else if !spec.x_categories.is_empty() {
        r.push(
            "x_categories",
            format!("{} charts take no x categories", spec.chart_type),
        );
    }

    if spec.chart_type == ChartType::Radar && spec.x_categories.len() < 3 {
        r.push("x_categories", "radar requires ≥3 categories");
    }

    let mut names = HashSet::new();
    for (si, s) in spec.series.iter().enumerate() {
        let field = format!("series[{si}]");
        if s.name.trim().is_empty() {
            r.push(format!("{field}.name"), "series name must be non-empty");
        } else if !names.insert(s.name.as_str()) {
            r.push(format!("{field}.name"), format!("duplicate series name {:?}", s.name));
        }
        if !expected_mark_ok(spec.chart_type, s.mark) {
            r.push(
                format!("{field}.mark"),
                format!("mark {:?} not allowed on {} charts", s.mark, spec.chart_type),
            );
        }
        if s.points.is_empty() {
            r.push(format!("{field}.points"), "series requires at least one point");
            continue;
        }
        if spec.chart_type == ChartType::Box && s.points.len() < 5 {
            r.push(
                format!("{field}.points"),
                format!("box series requires ≥5 raw values, found {}", s.points.len()),
            );
        }

        let axis = spec.value_axis(s);
        let axis_ok = if std::ptr::eq(axis, &spec.y_axis) { y_ok } else { sec_ok };
        let axis_name = if std::ptr::eq(axis, &spec.y_axis) {
            "y_axis"
        } else {
            "y_axis_secondary"
        };
        let mut labels = HashSet::new();
        for (pi, p) in s.points.iter().enumerate() {
            let pf = format!("{field}.points[{pi}]");
            if !p.y.is_finite() {
                r.push(format!("{pf}.y"), "y value must be finite");
                continue;
            }
            if axis_ok && !axis.contains(p.y) {
                r.push(
                    format!("{pf}.y"),
                    format!("value {} outside {axis_name} range [{}, {}]", p.y, axis.min, axis.max),
                );
            }
            match spec.chart_type {
                t if t.is_categorical() => match &p.label {
                    Some(l) => {
                        if !labels.insert(l.as_str()) {
                            r.push(format!("{pf}.label"), format!("duplicate category {l:?} in series"));
                        }
                        if !spec.x_categories.iter().any(|c| c == l) {
                            r.push(format!("{pf}.label"), format!("category {l:?} not in x_categories"));
                        }
                    }
                    None => r.push(format!("{pf}.label"), "categorical point requires a label"),
                },
                ChartType::Scatter => match p.x {
                    Some(x) if !x.is_finite() => r.push(format!("{pf}.x"), "x value must be finite"),
                    Some(x) => {
                        if let (true, Some(xa)) = (x_ok, &spec.x_axis) {
                            if !xa.contains(x) {
                                r.push(
                                    format!("{pf}.x"),
                                    format!("value {x} outside x_axis range [{}, {}]", xa.min, xa.max),
                                );
                            }
                        }
                    }
                    None => r.push(format!("{pf}.x"), "scatter point requires an x value"),
                },
                _ => {
                    if p.label.is_some() || p.x.is_some() {
                        r.push(pf, "box values carry neither label nor x");
                    }
                }
            }
        }
        if categorical && s.points.len() != spec.x_categories.len() {
            r.push(
                format!("{field}.points"),
                format!(
                    "series must give one value per category ({} points, {} categories)",
                    s.points.len(),
                    spec.x_categories.len()
                ),
            );
        }
    }

    if spec.chart_type == ChartType::Combo {
        let bars = spec.series.iter().filter(|s| s.mark == Mark::Bar).count();
        let lines = spec.series.iter().filter(|s| s.mark == Mark::Line).count();
        if bars == 0 || lines == 0 {
            r.push("series", "combo requires ≥1 bar series and ≥1 line series");
        }
    }

    r
}

/// Box-plot summary: quartiles by linear interpolation between order
/// statistics, whiskers at the most extreme data point within 1.5×IQR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub lower_whisker: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub upper_whisker: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

/// Quantile of sorted data at position `(n - 1) * p`, interpolated linearly.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_linear(&sorted, 0.25);
    let median = quantile_linear(&sorted, 0.5);
    let q3 = quantile_linear(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let lower_whisker = sorted.iter().copied().find(|&v| v >= lo_fence).unwrap_or(q1);
    let upper_whisker = sorted.iter().rev().copied().find(|&v| v <= hi_fence).unwrap_or(q3);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&v| v < lower_whisker || v > upper_whisker)
        .collect();
    BoxStats {
        min: sorted[0],
        lower_whisker,
        q1,
        median,
        q3,
        upper_whisker,
        max: sorted[sorted.len() - 1],
        outliers,
    }
}

// ---------------------------------------------------------------------------
// Sampling

const EASY_TICK_UNITS: [i64; 4] = [10, 20, 25, 50];
const HARD_TICK_UNITS: [i64; 6] = [30, 40, 60, 70, 150, 250];

const SERIES_NAMES: [&str; 16] = [
    "North",
    "South",
    "East",
    "West",
    "Central",
    "Domestic",
    "International",
    "Online",
    "In-store",
    "Urban",
    "Rural",
    "Public",
    "Private",
    "Segment A",
    "Segment B",
    "Segment C",
];

const RADAR_DIMENSIONS: [&str; 10] = [
    "Quality",
    "Cost",
    "Speed",
    "Reliability",
    "Coverage",
    "Growth",
    "Efficiency",
    "Satisfaction",
    "Innovation",
    "Safety",
];

const MONTHS: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

const SCATTER_X_LABELS: [&str; 5] = ["Budget Index", "Hours Invested", "Distance", "Age", "Exposure"];

/// Integer grid for one axis: every axis bound, tick and sampled value is an
/// integer number of `10^exp` units, so decimal renderings are exact.
#[derive(Debug, Clone, Copy)]
struct Scale {
    exp: i32,
    tick_units: i64,
    min_units: i64,
    n_ticks: i64,
}

impl Scale {
    fn sample(rng: &mut SeededRng, difficulty: Difficulty, allow_offset: bool) -> Self {
        let exp = rng.range_inclusive(-2, 2) as i32;
        let (tick_units, n_ticks) = match difficulty {
            Difficulty::Easy => (*rng.choose(&EASY_TICK_UNITS), rng.range_inclusive(4, 8)),
            Difficulty::Hard => (*rng.choose(&HARD_TICK_UNITS), rng.range_inclusive(5, 10)),
        };
        let min_units = if allow_offset && rng.bernoulli(0.5) {
            tick_units * rng.range_inclusive(1, 4)
        } else {
            0
        };
        Self {
            exp,
            tick_units,
            min_units,
            n_ticks,
        }
    }

    fn max_units(&self) -> i64 {
        self.min_units + self.n_ticks * self.tick_units
    }

    fn value(&self, units: i64) -> f64 {
        if self.exp >= 0 {
            units as f64 * 10f64.powi(self.exp)
        } else {
            units as f64 / 10f64.powi(-self.exp)
        }
    }

    fn axis(&self, label: &str, unit: Option<&str>) -> AxisSpec {
        AxisSpec {
            label: label.to_string(),
            min: self.value(self.min_units),
            max: self.value(self.max_units()),
            tick_interval: self.value(self.tick_units),
            unit: unit.map(str::to_string),
        }
    }

    /// Unit range values are drawn from: clear of the baseline, slightly
    /// below the top.
    fn value_window(&self) -> (i64, i64) {
        let span = self.max_units() - self.min_units;
        (self.min_units + span / 10, self.max_units() - span / 50)
    }

    fn on_tick(&self, units: i64) -> bool {
        (units - self.min_units).rem_euclid(self.tick_units) == 0
    }
}

/// Draws values on a scale, steering clear of tick lines and of any string
/// the renderer will print.
struct ValuePicker<'a> {
    scale: Scale,
    reserved: &'a HashSet<String>,
}

impl ValuePicker<'_> {
    fn acceptable(&self, units: i64) -> bool {
        let v = self.scale.value(units);
        units != 0 && !self.scale.on_tick(units) && !number_formats(v).iter().any(|s| self.reserved.contains(s))
    }

    /// Moves `units` upward (wrapping inside the window) to the nearest
    /// acceptable value.
    fn settle(&self, units: i64) -> i64 {
        let (lo, hi) = self.scale.value_window();
        let width = hi - lo + 1;
        let start = units.clamp(lo, hi);
        (0..width)
            .map(|k| lo + (start - lo + k).rem_euclid(width))
            .find(|&u| self.acceptable(u))
            .unwrap_or(start)
    }

    fn uniform(&self, rng: &mut SeededRng) -> i64 {
        let (lo, hi) = self.scale.value_window();
        self.settle(rng.range_inclusive(lo, hi))
    }

    /// Bounded random walk of `n` steps.
    fn walk(&self, rng: &mut SeededRng, n: usize) -> Vec<i64> {
        let (lo, hi) = self.scale.value_window();
        let step = ((hi - lo) / 4).max(1);
        let mut cur = rng.range_inclusive(lo, hi);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.settle(cur));
            cur = (cur + rng.range_inclusive(-step, step)).clamp(lo, hi);
        }
        out
    }

    fn values(&self, units: &[i64]) -> Vec<f64> {
        units.iter().map(|&u| self.scale.value(u)).collect()
    }
}

fn pick_names(rng: &mut SeededRng, pool: &[&str], k: usize) -> Vec<String> {
    rng.sample_indices(pool.len(), k)
        .into_iter()
        .map(|i| pool[i].to_string())
        .collect()
}

fn pick_categories(rng: &mut SeededRng, n: usize) -> (Vec<String>, &'static str) {
    match rng.below(4) {
        0 => {
            let start = 2005 + rng.below(10) as usize;
            ((start..start + n).map(|y| y.to_string()).collect(), "Year")
        }
        1 => {
            let year = 2018 + rng.below(5) as usize;
            (
                (0..n).map(|i| format!("{} Q{}", year + i / 4, i % 4 + 1)).collect(),
                "Quarter",
            )
        }
        2 if n <= 12 => (MONTHS[..n].iter().map(|m| m.to_string()).collect(), "Month"),
        _ => (
            (0..n)
                .map(|i| format!("Group {}", char::from(b'A' + i as u8)))
                .collect(),
            "Group",
        ),
    }
}

fn series_count(rng: &mut SeededRng, difficulty: Difficulty) -> usize {
    match difficulty {
        Difficulty::Easy => rng.range_inclusive(1, 2) as usize,
        Difficulty::Hard => rng.range_inclusive(3, 5) as usize,
    }
}

fn spec_id(seed: u64, chart_type: ChartType, topic: &str, difficulty: Difficulty) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(chart_type.as_str().as_bytes());
    h.update([0]);
    h.update(topic.as_bytes());
    h.update([0]);
    h.update(match difficulty {
        Difficulty::Easy => b"easy".as_slice(),
        Difficulty::Hard => b"hard".as_slice(),
    });
    let digest = hex::encode(h.finalize());
    format!("{}-{}", chart_type, &digest[..12])
}

fn reserved_set(labels: Vec<String>) -> HashSet<String> {
    labels.into_iter().collect()
}

/// Samples a chart spec. A pure function of its arguments: the same
/// `(seed, chart_type, topic, difficulty)` always yields the same spec.
/// Hard specs get 3-5 series (1-2 when easy) and non-round tick intervals.
pub fn sample_spec(
    topics: &TopicCatalog,
    seed: u64,
    chart_type: ChartType,
    topic: &str,
    difficulty: Difficulty,
) -> Result<ChartSpec, ModelError> {
    let profile = topics
        .get(topic)
        .ok_or_else(|| ModelError::UnknownTopic(topic.to_string()))?;
    let mut rng = SeededRng::new(seed);
    let id = spec_id(seed, chart_type, topic, difficulty);
    let style_seed = rng.below(1 << 32);

    let spec = match chart_type {
        ChartType::Bar | ChartType::Line | ChartType::Area => {
            sample_categorical(&mut rng, profile, chart_type, difficulty)
        }
        ChartType::Combo => sample_combo(&mut rng, profile, difficulty),
        ChartType::Radar => sample_radar(&mut rng, profile, difficulty),
        ChartType::Scatter => sample_scatter(&mut rng, profile, difficulty),
        ChartType::Box => sample_box(&mut rng, profile, difficulty),
    };

    Ok(ChartSpec {
        schema_version: SCHEMA_VERSION,
        id,
        topic: topic.to_string(),
        style_seed,
        ..spec
    })
}

fn skeleton(chart_type: ChartType, title: String, y_axis: AxisSpec) -> ChartSpec {
    ChartSpec {
        schema_version: SCHEMA_VERSION,
        id: String::new(),
        chart_type,
        topic: String::new(),
        title,
        x_categories: Vec::new(),
        series: Vec::new(),
        y_axis,
        y_axis_secondary: None,
        x_axis: None,
        style_seed: 0,
    }
}

fn sample_categorical(
    rng: &mut SeededRng,
    profile: &TopicProfile,
    chart_type: ChartType,
    difficulty: Difficulty,
) -> ChartSpec {
    let n_cat = match difficulty {
        Difficulty::Easy => rng.range_inclusive(4, 7),
        Difficulty::Hard => rng.range_inclusive(6, 10),
    } as usize;
    let (categories, kind) = pick_categories(rng, n_cat);
    let n_series = series_count(rng, difficulty);
    let names = pick_names(rng, &SERIES_NAMES, n_series);
    let scale = Scale::sample(rng, difficulty, chart_type == ChartType::Line);
    let y_axis = scale.axis(&profile.measure, profile.unit.as_deref());
    let mark = match chart_type {
        ChartType::Bar => Mark::Bar,
        ChartType::Line => Mark::Line,
        _ => Mark::AreaFill,
    };

    let mut spec = skeleton(chart_type, format!("{} by {}", profile.measure, kind), y_axis);
    spec.x_categories = categories;
    spec.series = names
        .iter()
        .map(|n| SeriesSpec {
            name: n.clone(),
            mark,
            points: Vec::new(),
        })
        .collect();
    let reserved = reserved_set(spec.permitted_labels());
    let picker = ValuePicker {
        scale,
        reserved: &reserved,
    };
    for s in &mut spec.series {
        let units: Vec<i64> = if chart_type == ChartType::Bar {
            (0..n_cat).map(|_| picker.uniform(rng)).collect()
        } else {
            picker.walk(rng, n_cat)
        };
        s.points = spec
            .x_categories
            .iter()
            .zip(picker.values(&units))
            .map(|(c, v)| DataPoint::category(c.clone(), v))
            .collect();
    }
    spec
}

fn sample_combo(rng: &mut SeededRng, profile: &TopicProfile, difficulty: Difficulty) -> ChartSpec {
    let n_cat = match difficulty {
        Difficulty::Easy => rng.range_inclusive(4, 7),
        Difficulty::Hard => rng.range_inclusive(5, 9),
    } as usize;
    let (categories, kind) = pick_categories(rng, n_cat);
    let (n_bar, n_line) = match difficulty {
        Difficulty::Easy => (1, 1),
        Difficulty::Hard => {
            let total = rng.range_inclusive(3, 5) as usize;
            let bars = rng.range_inclusive(1, (total - 1) as i64) as usize;
            (bars, total - bars)
        }
    };
    let names = pick_names(rng, &SERIES_NAMES, n_bar + n_line);
    let primary = Scale::sample(rng, difficulty, false);
    let secondary = match difficulty {
        Difficulty::Hard => Some(Scale::sample(rng, difficulty, true)),
        Difficulty::Easy => None,
    };
    let y_axis = primary.axis(&profile.measure, profile.unit.as_deref());

    let mut spec = skeleton(ChartType::Combo, format!("{} by {}", profile.measure, kind), y_axis);
    spec.y_axis_secondary = secondary.map(|s| s.axis("Index", None));
    spec.x_categories = categories;
    spec.series = names
        .iter()
        .enumerate()
        .map(|(i, n)| SeriesSpec {
            name: n.clone(),
            mark: if i < n_bar { Mark::Bar } else { Mark::Line },
            points: Vec::new(),
        })
        .collect();
    let reserved = reserved_set(spec.permitted_labels());
    let bar_picker = ValuePicker {
        scale: primary,
        reserved: &reserved,
    };
    let line_picker = ValuePicker {
        scale: secondary.unwrap_or(primary),
        reserved: &reserved,
    };
    for s in &mut spec.series {
        let (picker, units) = if s.mark == Mark::Bar {
            (
                &bar_picker,
                (0..n_cat).map(|_| bar_picker.uniform(rng)).collect::<Vec<_>>(),
            )
        } else {
            (&line_picker, line_picker.walk(rng, n_cat))
        };
        s.points = spec
            .x_categories
            .iter()
            .zip(picker.values(&units))
            .map(|(c, v)| DataPoint::category(c.clone(), v))
            .collect();
    }
    spec
}

fn sample_radar(rng: &mut SeededRng, profile: &TopicProfile, difficulty: Difficulty) -> ChartSpec {
    let n_dim = match difficulty {
        Difficulty::Easy => rng.range_inclusive(5, 6),
        Difficulty::Hard => rng.range_inclusive(6, 8),
    } as usize;
    let dims = pick_names(rng, &RADAR_DIMENSIONS, n_dim);
    let n_series = series_count(rng, difficulty);
    let names = pick_names(rng, &SERIES_NAMES, n_series);
    let scale = Scale::sample(rng, difficulty, false);
    let y_axis = scale.axis("Score", None);

    let mut spec = skeleton(ChartType::Radar, format!("{} Profile", profile.measure), y_axis);
    spec.x_categories = dims;
    spec.series = names
        .iter()
        .map(|n| SeriesSpec {
            name: n.clone(),
            mark: Mark::Line,
            points: Vec::new(),
        })
        .collect();
    let reserved = reserved_set(spec.permitted_labels());
    let picker = ValuePicker {
        scale,
        reserved: &reserved,
    };
    for s in &mut spec.series {
        let units: Vec<i64> = (0..n_dim).map(|_| picker.uniform(rng)).collect();
        s.points = spec
            .x_categories
            .iter()
            .zip(picker.values(&units))
            .map(|(c, v)| DataPoint::category(c.clone(), v))
            .collect();
    }
    spec
}

fn sample_scatter(rng: &mut SeededRng, profile: &TopicProfile, difficulty: Difficulty) -> ChartSpec {
    let n_series = series_count(rng, difficulty).min(3);
    let names = pick_names(rng, &SERIES_NAMES, n_series);
    let n_points = match difficulty {
        Difficulty::Easy => rng.range_inclusive(5, 8),
        Difficulty::Hard => rng.range_inclusive(8, 12),
    } as usize;
    let x_scale = Scale::sample(rng, difficulty, true);
    let y_scale = Scale::sample(rng, difficulty, true);
    let x_label = *rng.choose(&SCATTER_X_LABELS);
    let y_axis = y_scale.axis(&profile.measure, profile.unit.as_deref());

    let mut spec = skeleton(
        ChartType::Scatter,
        format!("{} vs. {}", profile.measure, x_label),
        y_axis,
    );
    spec.x_axis = Some(x_scale.axis(x_label, None));
    spec.series = names
        .iter()
        .map(|n| SeriesSpec {
            name: n.clone(),
            mark: Mark::Point,
            points: Vec::new(),
        })
        .collect();
    let reserved = reserved_set(spec.permitted_labels());
    let xp = ValuePicker {
        scale: x_scale,
        reserved: &reserved,
    };
    let yp = ValuePicker {
        scale: y_scale,
        reserved: &reserved,
    };
    for s in &mut spec.series {
        let mut xs: Vec<i64> = Vec::with_capacity(n_points);
        while xs.len() < n_points {
            let mut x = xp.uniform(rng);
            // x values are unique within a series so each point is addressable
            let (lo, hi) = x_scale.value_window();
            let mut guard = hi - lo + 1;
            while xs.contains(&x) && guard > 0 {
                x = xp.settle(if x >= hi { lo } else { x + 1 });
                guard -= 1;
            }
            if xs.contains(&x) {
                break;
            }
            xs.push(x);
        }
        xs.sort_unstable();
        s.points = xs
            .iter()
            .map(|&x| DataPoint::xy(x_scale.value(x), y_scale.value(yp.uniform(rng))))
            .collect();
    }
    spec
}

fn sample_box(rng: &mut SeededRng, profile: &TopicProfile, difficulty: Difficulty) -> ChartSpec {
    let n_boxes = series_count(rng, difficulty);
    let names = pick_names(rng, &SERIES_NAMES, n_boxes);
    let scale = Scale::sample(rng, difficulty, false);
    let y_axis = scale.axis(&profile.measure, profile.unit.as_deref());

    let mut spec = skeleton(ChartType::Box, format!("Distribution of {}", profile.measure), y_axis);
    spec.series = names
        .iter()
        .map(|n| SeriesSpec {
            name: n.clone(),
            mark: Mark::Point,
            points: Vec::new(),
        })
        .collect();
    let reserved = reserved_set(spec.permitted_labels());
    let picker = ValuePicker {
        scale,
        reserved: &reserved,
    };
    let (lo, hi) = scale.value_window();
    let span = hi - lo;
    for s in &mut spec.series {
        let n = match difficulty {
            Difficulty::Easy => rng.range_inclusive(5, 9),
            Difficulty::Hard => rng.range_inclusive(8, 15),
        } as usize;
        // Redraw until no summary statistic prints like an axis label.
        let mut values = Vec::new();
        for _ in 0..200 {
            let center = rng.range_inclusive(lo + span / 4, hi - span / 4);
            let spread = rng.range_inclusive((span / 20).max(1), (span / 5).max(2));
            let units: Vec<i64> = (0..n)
                .map(|_| {
                    let bump = rng.range_inclusive(-spread, spread) + rng.range_inclusive(-spread, spread);
                    picker.settle(center + bump / 2)
                })
                .collect();
            values = picker.values(&units);
            let stats = box_stats(&values);
            let clean = [
                stats.lower_whisker,
                stats.q1,
                stats.median,
                stats.q3,
                stats.upper_whisker,
            ]
            .iter()
            .all(|&v| v != 0.0 && !number_formats(v).iter().any(|f| reserved.contains(f)));
            if clean {
                break;
            }
        }
        s.points = values.into_iter().map(DataPoint::sample).collect();
    }
    spec
}
