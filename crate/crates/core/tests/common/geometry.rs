//! Pixel-space oracle for rendered charts. Plot bounds are read back from
//! the drawn axis lines and spokes, never from the renderer's own inverse
//! maps, and every mark is mapped back to a data value.

use std::collections::HashSet;

use chartforge_core::chart_model::{AxisSpec, ChartSpec, ChartType, Mark};
use chartforge_core::renderer::{extract_text_nodes, render};
use roxmltree::{Document, Node};

fn num(n: Node, attr: &str) -> f64 {
    n.attribute(attr)
        .unwrap_or_else(|| panic!("missing {attr}"))
        .parse()
        .unwrap()
}

fn by_class<'a>(doc: &'a Document, class: &str) -> Vec<Node<'a, 'a>> {
    doc.descendants()
        .filter(|n| n.attribute("class") == Some(class))
        .collect()
}

fn series_of(n: Node) -> usize {
    n.attribute("data-series").unwrap().parse().unwrap()
}

fn index_of(n: Node) -> usize {
    n.attribute("data-index").unwrap().parse().unwrap()
}

/// Vertical extent of the plot, from the left value-axis line.
fn vertical_span(doc: &Document) -> (f64, f64) {
    let axis = by_class(doc, "axis-line")
        .into_iter()
        .find(|n| num(*n, "x1") == num(*n, "x2"))
        .expect("vertical axis line");
    let (a, b) = (num(axis, "y1"), num(axis, "y2"));
    (a.min(b), a.max(b))
}

fn horizontal_span(doc: &Document) -> (f64, f64) {
    let axis = by_class(doc, "axis-line")
        .into_iter()
        .find(|n| num(*n, "y1") == num(*n, "y2"))
        .expect("horizontal axis line");
    let (a, b) = (num(axis, "x1"), num(axis, "x2"));
    (a.min(b), a.max(b))
}

fn from_y(y: f64, (top, bottom): (f64, f64), min: f64, max: f64) -> f64 {
    min + (bottom - y) / (bottom - top) * (max - min)
}

/// Linear-interpolation quantile, written out independently.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Checks every mark of one spec, returning how many were compared.
pub fn check(spec: &ChartSpec) -> usize {
    let svg = render(spec).unwrap().svg_text;
    let doc = Document::parse(&svg).unwrap();
    let y = &spec.y_axis;
    let tol = |a: &AxisSpec| (a.max - a.min) / 1e4;
    let axis_for = |si: usize| {
        let s = &spec.series[si];
        match (&spec.y_axis_secondary, s.mark) {
            (Some(sec), Mark::Line) if spec.chart_type == ChartType::Combo => sec,
            _ => y,
        }
    };
    let mut checked = 0;
    let close = |got: f64, want: f64, a: &AxisSpec, what: &str| {
        assert!(
            (got - want).abs() <= tol(a),
            "{}: {what} recovered {got}, spec has {want}",
            spec.id
        );
    };

    match spec.chart_type {
        ChartType::Radar => {
            let spokes = by_class(&doc, "spoke");
            let (cx, cy) = (num(spokes[0], "x1"), num(spokes[0], "y1"));
            let radius = (num(spokes[0], "x2") - cx).hypot(num(spokes[0], "y2") - cy);
            for m in by_class(&doc, "marker") {
                let s = &spec.series[series_of(m)];
                let want = s.value_at(&spec.x_categories[index_of(m)]).unwrap();
                let r = (num(m, "cx") - cx).hypot(num(m, "cy") - cy);
                close(y.min + r / radius * (y.max - y.min), want, y, "radar vertex");
                checked += 1;
            }
        }
        ChartType::Scatter => {
            let v = vertical_span(&doc);
            let (left, right) = horizontal_span(&doc);
            let xa = spec.x_axis.as_ref().unwrap();
            for p in by_class(&doc, "point") {
                let dp = &spec.series[series_of(p)].points[index_of(p)];
                close(from_y(num(p, "cy"), v, y.min, y.max), dp.y, y, "point y");
                let x = xa.min + (num(p, "cx") - left) / (right - left) * (xa.max - xa.min);
                close(x, dp.x.unwrap(), xa, "point x");
                checked += 2;
            }
        }
        ChartType::Box => {
            let v = vertical_span(&doc);
            let medians = by_class(&doc, "median");
            let boxes = by_class(&doc, "box");
            for (si, s) in spec.series.iter().enumerate() {
                let mut vals = s.raw_values();
                vals.sort_by(f64::total_cmp);
                let b = boxes.iter().find(|n| series_of(**n) == si).unwrap();
                let top = num(*b, "y");
                close(from_y(top, v, y.min, y.max), quantile(&vals, 0.75), y, "q3");
                close(
                    from_y(top + num(*b, "height"), v, y.min, y.max),
                    quantile(&vals, 0.25),
                    y,
                    "q1",
                );
                close(
                    from_y(num(medians[si], "y1"), v, y.min, y.max),
                    quantile(&vals, 0.5),
                    y,
                    "median",
                );
                checked += 3;
            }
        }
        _ => {
            let v = vertical_span(&doc);
            for b in by_class(&doc, "bar") {
                let si = series_of(b);
                let a = axis_for(si);
                let want = spec.series[si].value_at(&spec.x_categories[index_of(b)]).unwrap();
                close(from_y(num(b, "y"), v, a.min, a.max), want, a, "bar top");
                // the bar reaches down to the axis floor
                close(
                    from_y(num(b, "y") + num(b, "height"), v, a.min, a.max),
                    a.min,
                    a,
                    "bar base",
                );
                checked += 1;
            }
            for m in by_class(&doc, "marker") {
                let si = series_of(m);
                let a = axis_for(si);
                let want = spec.series[si].value_at(&spec.x_categories[index_of(m)]).unwrap();
                close(from_y(num(m, "cy"), v, a.min, a.max), want, a, "marker");
                checked += 1;
            }
            for edge in by_class(&doc, "area-edge") {
                let si = series_of(edge);
                let a = axis_for(si);
                let wants: Vec<f64> = spec
                    .x_categories
                    .iter()
                    .filter_map(|c| spec.series[si].value_at(c))
                    .collect();
                let pts: Vec<f64> = edge
                    .attribute("points")
                    .unwrap()
                    .split_whitespace()
                    .map(|p| p.split_once(',').unwrap().1.parse().unwrap())
                    .collect();
                assert_eq!(pts.len(), wants.len(), "{}: area vertices", spec.id);
                for (py, want) in pts.into_iter().zip(wants) {
                    close(from_y(py, v, a.min, a.max), want, a, "area vertex");
                    checked += 1;
                }
            }
        }
    }
    checked
}

/// Every way a value might be printed: shortest decimal, fixed decimals,
/// thousands grouping, and a percent sign.
pub fn printed_forms(v: f64) -> Vec<String> {
    let mut forms = vec![format!("{v}")];
    for d in 0..=3 {
        forms.push(format!("{v:.d$}"));
    }
    let grouped: Vec<String> = forms
        .iter()
        .map(|s| {
            let (sign, body) = s.strip_prefix('-').map_or(("", s.as_str()), |b| ("-", b));
            let (int, frac) = body.split_once('.').map_or((body, None), |(i, f)| (i, Some(f)));
            let mut g = String::new();
            for (k, ch) in int.chars().enumerate() {
                if k > 0 && (int.len() - k) % 3 == 0 {
                    g.push(',');
                }
                g.push(ch);
            }
            match frac {
                Some(f) => format!("{sign}{g}.{f}"),
                None => format!("{sign}{g}"),
            }
        })
        .collect();
    forms.extend(grouped);
    let pct: Vec<String> = forms.iter().map(|s| format!("{s}%")).collect();
    forms.extend(pct);
    forms
}

/// Text nodes of the rendered spec that print one of its data values.
pub fn leaked_values(spec: &ChartSpec) -> Vec<String> {
    let svg = render(spec).unwrap().svg_text;
    let nodes: HashSet<String> = extract_text_nodes(&svg).unwrap().into_iter().collect();
    let mut leaks = Vec::new();
    for v in spec.data_values() {
        // only forms that read back as v itself count
        for f in printed_forms(v) {
            let plain = f.trim_end_matches('%').replace(',', "");
            if plain.parse::<f64>().ok() == Some(v) && nodes.contains(&f) {
                leaks.push(f);
            }
        }
    }
    leaks
}
