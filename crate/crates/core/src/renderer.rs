//! Deterministic SVG rendering of chart specs.
//!
//! Output carries axes, ticks, gridlines, category labels and a legend, and
//! never prints a data value. Coordinates are written with three decimals, so
//! the same spec always yields the same bytes.
//!
//! Value-to-pixel mapping is linear: `y = bottom - (v - min) / (max - min) * height`
//! for cartesian charts and `r = (v - min) / (max - min) * radius` on radar
//! charts. Marks carry `data-series` / `data-index` attributes (positions,
//! never values) so geometry can be audited.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart_model::{box_stats, validate_spec, AxisSpec, ChartSpec, ChartType, Mark, ValidationReport};

pub const DEFAULT_WIDTH: u32 = 800;
pub const DEFAULT_HEIGHT: u32 = 600;

/// Fixed 10-color cycle.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

const MARGIN_LEFT: f64 = 90.0;
const MARGIN_RIGHT: f64 = 90.0;
const MARGIN_TOP: f64 = 70.0;
const MARGIN_BOTTOM: f64 = 120.0;
const FONT_SIZE: f64 = 12.0;
/// Monospace advance assumed for layout.
const CHAR_WIDTH: f64 = FONT_SIZE * 0.6;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("spec failed validation:\n{0}")]
    InvalidSpec(ValidationReport),
    #[error("malformed svg: {0}")]
    Parse(String),
    #[error("raster export failed: {0}")]
    Raster(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedChart {
    pub svg_text: String,
    pub width_px: u32,
    pub height_px: u32,
    pub spec_id: String,
}

/// Sidecar written next to each SVG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderMeta {
    pub spec_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub palette: Vec<String>,
    pub style_seed: u64,
}

impl RenderedChart {
    pub fn meta(&self, spec: &ChartSpec) -> RenderMeta {
        RenderMeta {
            spec_id: self.spec_id.clone(),
            width_px: self.width_px,
            height_px: self.height_px,
            palette: (0..spec.series.len())
                .map(|i| series_color(spec, i).to_string())
                .collect(),
            style_seed: spec.style_seed,
        }
    }
}

/// Hook for turning the vector output into a raster image. Raster bytes are
/// outside the determinism guarantee.
pub trait RasterExporter {
    fn export_png(&self, svg_text: &str, width_px: u32, height_px: u32) -> Result<Vec<u8>, RenderError>;
}

/// Plot region in pixel space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotArea {
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

impl PlotArea {
    pub fn for_canvas(width: u32, height: u32) -> Self {
        Self {
            left: MARGIN_LEFT,
            right: f64::from(width) - MARGIN_RIGHT,
            top: MARGIN_TOP,
            bottom: f64::from(height) - MARGIN_BOTTOM,
        }
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn y_of(&self, axis: &AxisSpec, v: f64) -> f64 {
        self.bottom - axis.fraction(v) * self.height()
    }

    pub fn x_of(&self, axis: &AxisSpec, v: f64) -> f64 {
        self.left + axis.fraction(v) * self.width()
    }

    /// Inverse of [`PlotArea::y_of`].
    pub fn value_at_y(&self, axis: &AxisSpec, y: f64) -> f64 {
        axis.min + (self.bottom - y) / self.height() * (axis.max - axis.min)
    }

    pub fn value_at_x(&self, axis: &AxisSpec, x: f64) -> f64 {
        axis.min + (x - self.left) / self.width() * (axis.max - axis.min)
    }

    pub fn slot_center(&self, n: usize, i: usize) -> f64 {
        let w = self.width() / n as f64;
        self.left + w * (i as f64 + 0.5)
    }

    pub fn radar_center(&self) -> (f64, f64) {
        ((self.left + self.right) / 2.0, (self.top + self.bottom) / 2.0)
    }

    pub fn radar_radius(&self) -> f64 {
        self.width().min(self.height()) / 2.0 - 20.0
    }
}

/// Spoke angle for radar category `k` of `n`, starting straight up and
/// running clockwise.
pub fn radar_angle(k: usize, n: usize) -> f64 {
    -PI / 2.0 + 2.0 * PI * k as f64 / n as f64
}

pub fn series_color(spec: &ChartSpec, series_index: usize) -> &'static str {
    PALETTE[(series_index + (spec.style_seed % 10) as usize) % PALETTE.len()]
}

fn px(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Svg {
    buf: String,
}

impl Svg {
    fn text(&mut self, class: &str, x: f64, y: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.buf,
            r#"<text class="{class}" x="{}" y="{}" text-anchor="{anchor}">{}</text>"#,
            px(x),
            px(y),
            escape(content)
        );
    }

    fn rotated_text(&mut self, class: &str, x: f64, y: f64, content: &str) {
        let _ = writeln!(
            self.buf,
            r#"<text class="{class}" x="{x}" y="{y}" text-anchor="middle" transform="rotate(-90 {x} {y})">{}</text>"#,
            escape(content),
            x = px(x),
            y = px(y),
        );
    }

    fn line(&mut self, class: &str, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.buf,
            r#"<line class="{class}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}"/>"#,
            px(x1),
            px(y1),
            px(x2),
            px(y2)
        );
    }

    fn raw(&mut self, s: &str) {
        self.buf.push_str(s);
        self.buf.push('\n');
    }
}

fn points_attr(pts: &[(f64, f64)]) -> String {
    pts.iter()
        .map(|(x, y)| format!("{},{}", px(*x), px(*y)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders on the default 800×600 canvas.
pub fn render(spec: &ChartSpec) -> Result<RenderedChart, RenderError> {
    render_on_canvas(spec, DEFAULT_WIDTH, DEFAULT_HEIGHT)
}

pub fn render_on_canvas(spec: &ChartSpec, width: u32, height: u32) -> Result<RenderedChart, RenderError> {
    let report = validate_spec(spec);
    if !report.is_clean() {
        return Err(RenderError::InvalidSpec(report));
    }
    let area = PlotArea::for_canvas(width, height);
    let mut svg = Svg { buf: String::new() };
    let _ = writeln!(
        svg.buf,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="{}">"#,
        FONT_SIZE
    );
    let _ = writeln!(
        svg.buf,
        r##"<rect class="background" x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##
    );

    if !spec.title.is_empty() {
        let _ = writeln!(
            svg.buf,
            r#"<text class="title" x="{}" y="{}" text-anchor="middle" font-size="18">{}</text>"#,
            px(f64::from(width) / 2.0),
            px(MARGIN_TOP / 2.0),
            escape(&spec.title)
        );
    }

    match spec.chart_type {
        ChartType::Radar => draw_radar(&mut svg, spec, &area),
        ChartType::Scatter => {
            draw_value_axis(&mut svg, &area, &spec.y_axis, Side::Left, true);
            if let Some(xa) = &spec.x_axis {
                draw_x_value_axis(&mut svg, &area, xa);
            }
            draw_scatter(&mut svg, spec, &area);
        }
        ChartType::Box => {
            draw_value_axis(&mut svg, &area, &spec.y_axis, Side::Left, true);
            draw_box(&mut svg, spec, &area);
        }
        _ => {
            draw_value_axis(&mut svg, &area, &spec.y_axis, Side::Left, true);
            if let Some(sec) = &spec.y_axis_secondary {
                draw_value_axis(&mut svg, &area, sec, Side::Right, false);
            }
            draw_categories(&mut svg, &area, &spec.x_categories);
            draw_categorical_series(&mut svg, spec, &area);
        }
    }

    if spec.chart_type != ChartType::Box {
        draw_legend(&mut svg, spec, width, height);
    }
    svg.raw("</svg>");

    Ok(RenderedChart {
        svg_text: svg.buf,
        width_px: width,
        height_px: height,
        spec_id: spec.id.clone(),
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Left,
    Right,
}

fn draw_value_axis(svg: &mut Svg, area: &PlotArea, axis: &AxisSpec, side: Side, grid: bool) {
    let x = if side == Side::Left { area.left } else { area.right };
    svg.raw(r#"<g class="axis">"#);
    svg.line("axis-line", x, area.top, x, area.bottom, "#333333");
    for (v, label) in axis.ticks().into_iter().zip(axis.tick_labels()) {
        let y = area.y_of(axis, v);
        if grid {
            svg.line("grid", area.left, y, area.right, y, "#dddddd");
        }
        let (tx, anchor, x2) = match side {
            Side::Left => (x - 8.0, "end", x - 4.0),
            Side::Right => (x + 8.0, "start", x + 4.0),
        };
        svg.line("tick", x, y, x2, y, "#333333");
        svg.text("tick-label", tx, y + FONT_SIZE / 3.0, anchor, &label);
    }
    let title_x = match side {
        Side::Left => 25.0,
        Side::Right => area.right + MARGIN_RIGHT - 20.0,
    };
    svg.rotated_text("axis-title", title_x, (area.top + area.bottom) / 2.0, &axis.title());
    svg.raw("</g>");
}

fn draw_x_value_axis(svg: &mut Svg, area: &PlotArea, axis: &AxisSpec) {
    svg.raw(r#"<g class="axis">"#);
    svg.line("axis-line", area.left, area.bottom, area.right, area.bottom, "#333333");
    for (v, label) in axis.ticks().into_iter().zip(axis.tick_labels()) {
        let x = area.x_of(axis, v);
        svg.line("grid", x, area.top, x, area.bottom, "#dddddd");
        svg.line("tick", x, area.bottom, x, area.bottom + 4.0, "#333333");
        svg.text("tick-label", x, area.bottom + 18.0, "middle", &label);
    }
    svg.text(
        "axis-title",
        (area.left + area.right) / 2.0,
        area.bottom + 42.0,
        "middle",
        &axis.title(),
    );
    svg.raw("</g>");
}

fn draw_categories(svg: &mut Svg, area: &PlotArea, categories: &[String]) {
    svg.raw(r#"<g class="categories">"#);
    svg.line("axis-line", area.left, area.bottom, area.right, area.bottom, "#333333");
    for (i, c) in categories.iter().enumerate() {
        svg.text(
            "category-label",
            area.slot_center(categories.len(), i),
            area.bottom + 18.0,
            "middle",
            c,
        );
    }
    svg.raw("</g>");
}

fn draw_categorical_series(svg: &mut Svg, spec: &ChartSpec, area: &PlotArea) {
    let n_cat = spec.x_categories.len();
    let bar_series: Vec<usize> = spec
        .series
        .iter()
        .enumerate()
        .filter(|(_, s)| s.mark == Mark::Bar)
        .map(|(i, _)| i)
        .collect();
    let slot = area.width() / n_cat as f64;
    let group = slot * 0.8;
    let bar_w = if bar_series.is_empty() {
        0.0
    } else {
        group / bar_series.len() as f64
    };

    // bars first so lines stay on top
    for (bi, &si) in bar_series.iter().enumerate() {
        let s = &spec.series[si];
        let axis = spec.value_axis(s);
        let color = series_color(spec, si);
        let _ = writeln!(svg.buf, r#"<g class="series" data-series="{si}">"#);
        for (ci, cat) in spec.x_categories.iter().enumerate() {
            let Some(v) = s.value_at(cat) else { continue };
            let x = area.left + slot * ci as f64 + slot * 0.1 + bar_w * bi as f64;
            let top = area.y_of(axis, v);
            let base = area.y_of(axis, axis.min);
            let _ = writeln!(
                svg.buf,
                r#"<rect class="bar" data-series="{si}" data-index="{ci}" x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
                px(x),
                px(top),
                px(bar_w),
                px(base - top)
            );
        }
        svg.raw("</g>");
    }

    for (si, s) in spec.series.iter().enumerate() {
        if s.mark == Mark::Bar {
            continue;
        }
        let axis = spec.value_axis(s);
        let color = series_color(spec, si);
        let pts: Vec<(usize, f64, f64)> = spec
            .x_categories
            .iter()
            .enumerate()
            .filter_map(|(ci, cat)| {
                s.value_at(cat)
                    .map(|v| (ci, area.slot_center(n_cat, ci), area.y_of(axis, v)))
            })
            .collect();
        let xy: Vec<(f64, f64)> = pts.iter().map(|&(_, x, y)| (x, y)).collect();
        let _ = writeln!(svg.buf, r#"<g class="series" data-series="{si}">"#);
        if s.mark == Mark::AreaFill {
            let base = area.y_of(axis, axis.min);
            let mut poly = Vec::with_capacity(xy.len() + 2);
            if let (Some(first), Some(last)) = (xy.first(), xy.last()) {
                poly.push((first.0, base));
                poly.extend(xy.iter().copied());
                poly.push((last.0, base));
            }
            let _ = writeln!(
                svg.buf,
                r#"<polygon class="area" data-series="{si}" points="{}" fill="{color}" fill-opacity="0.35" stroke="none"/>"#,
                points_attr(&poly)
            );
            let _ = writeln!(
                svg.buf,
                r#"<polyline class="area-edge" data-series="{si}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                points_attr(&xy)
            );
        } else {
            let _ = writeln!(
                svg.buf,
                r#"<polyline class="line" data-series="{si}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                points_attr(&xy)
            );
            for &(ci, x, y) in &pts {
                let _ = writeln!(
                    svg.buf,
                    r#"<circle class="marker" data-series="{si}" data-index="{ci}" cx="{}" cy="{}" r="3" fill="{color}"/>"#,
                    px(x),
                    px(y)
                );
            }
        }
        svg.raw("</g>");
    }
}

fn draw_scatter(svg: &mut Svg, spec: &ChartSpec, area: &PlotArea) {
    let Some(xa) = &spec.x_axis else { return };
    for (si, s) in spec.series.iter().enumerate() {
        let color = series_color(spec, si);
        let _ = writeln!(svg.buf, r#"<g class="series" data-series="{si}">"#);
        for (pi, p) in s.points.iter().enumerate() {
            let Some(x) = p.x else { continue };
            let _ = writeln!(
                svg.buf,
                r#"<circle class="point" data-series="{si}" data-index="{pi}" cx="{}" cy="{}" r="4" fill="{color}"/>"#,
                px(area.x_of(xa, x)),
                px(area.y_of(&spec.y_axis, p.y))
            );
        }
        svg.raw("</g>");
    }
}

fn draw_box(svg: &mut Svg, spec: &ChartSpec, area: &PlotArea) {
    let n = spec.series.len();
    let slot = area.width() / n as f64;
    let axis = &spec.y_axis;
    svg.raw(r#"<g class="categories">"#);
    svg.line("axis-line", area.left, area.bottom, area.right, area.bottom, "#333333");
    for (i, s) in spec.series.iter().enumerate() {
        svg.text(
            "category-label",
            area.slot_center(n, i),
            area.bottom + 18.0,
            "middle",
            &s.name,
        );
    }
    svg.raw("</g>");
    for (si, s) in spec.series.iter().enumerate() {
        let b = box_stats(&s.raw_values());
        let color = series_color(spec, si);
        let cx = area.slot_center(n, si);
        let half = (slot * 0.3).min(60.0);
        let y = |v: f64| area.y_of(axis, v);
        let _ = writeln!(svg.buf, r#"<g class="series" data-series="{si}">"#);
        svg.line("whisker", cx, y(b.upper_whisker), cx, y(b.q3), "#333333");
        svg.line("whisker", cx, y(b.q1), cx, y(b.lower_whisker), "#333333");
        svg.line(
            "whisker-cap",
            cx - half / 2.0,
            y(b.upper_whisker),
            cx + half / 2.0,
            y(b.upper_whisker),
            "#333333",
        );
        svg.line(
            "whisker-cap",
            cx - half / 2.0,
            y(b.lower_whisker),
            cx + half / 2.0,
            y(b.lower_whisker),
            "#333333",
        );
        let _ = writeln!(
            svg.buf,
            r##"<rect class="box" data-series="{si}" x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="0.6" stroke="#333333"/>"##,
            px(cx - half),
            px(y(b.q3)),
            px(2.0 * half),
            px(y(b.q1) - y(b.q3))
        );
        svg.line("median", cx - half, y(b.median), cx + half, y(b.median), "#000000");
        for (oi, o) in b.outliers.iter().enumerate() {
            let _ = writeln!(
                svg.buf,
                r#"<circle class="outlier" data-series="{si}" data-index="{oi}" cx="{}" cy="{}" r="3" fill="none" stroke="{color}"/>"#,
                px(cx),
                px(y(*o))
            );
        }
        svg.raw("</g>");
    }
}

fn draw_radar(svg: &mut Svg, spec: &ChartSpec, area: &PlotArea) {
    let axis = &spec.y_axis;
    let n = spec.x_categories.len();
    let (cx, cy) = area.radar_center();
    let radius = area.radar_radius();
    let at = |k: usize, r: f64| {
        let a = radar_angle(k, n);
        (cx + r * a.cos(), cy + r * a.sin())
    };

    svg.raw(r#"<g class="axis">"#);
    for (v, label) in axis.ticks().into_iter().zip(axis.tick_labels()) {
        let r = axis.fraction(v) * radius;
        if r > 0.0 {
            let ring: Vec<(f64, f64)> = (0..n).map(|k| at(k, r)).collect();
            let _ = writeln!(
                svg.buf,
                r##"<polygon class="grid" points="{}" fill="none" stroke="#dddddd"/>"##,
                points_attr(&ring)
            );
        }
        svg.text("tick-label", cx + 4.0, cy - r - 2.0, "start", &label);
    }
    for (k, c) in spec.x_categories.iter().enumerate() {
        let (x, y) = at(k, radius);
        svg.line("spoke", cx, cy, x, y, "#bbbbbb");
        let (lx, ly) = at(k, radius + 16.0);
        let a = radar_angle(k, n).cos();
        let anchor = if a > 0.2 {
            "start"
        } else if a < -0.2 {
            "end"
        } else {
            "middle"
        };
        svg.text("category-label", lx, ly + FONT_SIZE / 3.0, anchor, c);
    }
    svg.raw("</g>");

    for (si, s) in spec.series.iter().enumerate() {
        let color = series_color(spec, si);
        let verts: Vec<(usize, f64, f64)> = spec
            .x_categories
            .iter()
            .enumerate()
            .filter_map(|(k, cat)| {
                s.value_at(cat).map(|v| {
                    let (x, y) = at(k, axis.fraction(v) * radius);
                    (k, x, y)
                })
            })
            .collect();
        let xy: Vec<(f64, f64)> = verts.iter().map(|&(_, x, y)| (x, y)).collect();
        let _ = writeln!(svg.buf, r#"<g class="series" data-series="{si}">"#);
        let _ = writeln!(
            svg.buf,
            r#"<polygon class="radar" data-series="{si}" points="{}" fill="{color}" fill-opacity="0.2" stroke="{color}" stroke-width="2"/>"#,
            points_attr(&xy)
        );
        for &(k, x, y) in &verts {
            let _ = writeln!(
                svg.buf,
                r#"<circle class="marker" data-series="{si}" data-index="{k}" cx="{}" cy="{}" r="3" fill="{color}"/>"#,
                px(x),
                px(y)
            );
        }
        svg.raw("</g>");
    }
}

fn draw_legend(svg: &mut Svg, spec: &ChartSpec, width: u32, height: u32) {
    let mut x = MARGIN_LEFT;
    let mut y = f64::from(height) - 40.0;
    let max_x = f64::from(width) - 20.0;
    svg.raw(r#"<g class="legend">"#);
    for (si, s) in spec.series.iter().enumerate() {
        let entry_w = 18.0 + CHAR_WIDTH * s.name.chars().count() as f64 + 16.0;
        if x + entry_w > max_x && x > MARGIN_LEFT {
            x = MARGIN_LEFT;
            y += 18.0;
        }
        let _ = writeln!(
            svg.buf,
            r#"<rect class="legend-swatch" data-series="{si}" x="{}" y="{}" width="12" height="12" fill="{}"/>"#,
            px(x),
            px(y - 10.0),
            series_color(spec, si)
        );
        svg.text("legend-label", x + 18.0, y, "start", &s.name);
        x += entry_w;
    }
    svg.raw("</g>");
}

/// Every non-blank text run in the document, in document order.
pub fn extract_text_nodes(svg_text: &str) -> Result<Vec<String>, RenderError> {
    let doc = roxmltree::Document::parse(svg_text).map_err(|e| RenderError::Parse(e.to_string()))?;
    Ok(doc
        .descendants()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect())
}

/// Text nodes of `svg_text` that print one of the chart spec's data values.
pub fn annotation_leaks(spec: &ChartSpec, svg_text: &str) -> Result<Vec<String>, RenderError> {
    let nodes = extract_text_nodes(svg_text)?;
    let forbidden: std::collections::HashSet<String> = spec
        .data_values()
        .into_iter()
        .flat_map(crate::chart_model::number_formats)
        .collect();
    Ok(nodes.into_iter().filter(|t| forbidden.contains(t)).collect())
}
