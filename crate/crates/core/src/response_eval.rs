//! Response parsing and relaxed-accuracy scoring.
//!
//! A prediction is correct when `|pred - gt| <= tau * |gt|` (closed interval,
//! default `tau = 0.02`). The test is computed as `relative_error(pred, gt) <=
//! tau` so that it agrees bit for bit with the reward's `d_rel < eps` branch
//! everywhere except the single boundary point `d_rel == tau`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer_parse;
use crate::chart_model::ChartType;
use crate::qa_engine::{QaItem, Source, REAL_TYPES};
use crate::reward_engine::relative_error;

pub const DEFAULT_TAU: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("ground truth is zero; the relaxed-accuracy interval is undefined")]
    ZeroGroundTruth,
    #[error("responses reference unknown item ids: {}", .0.join(", "))]
    UnknownItems(Vec<String>),
    #[error("more than one response for item ids: {}", .0.join(", "))]
    DuplicateResponses(Vec<String>),
    #[error("tau must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("unknown prompt mode {0:?}")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Direct,
    OptionalCot,
    ForcedCot,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Direct => "direct",
            PromptMode::OptionalCot => "optional_cot",
            PromptMode::ForcedCot => "forced_cot",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(PromptMode::Direct),
            "optional_cot" => Ok(PromptMode::OptionalCot),
            "forced_cot" => Ok(PromptMode::ForcedCot),
            other => Err(EvalError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    MissingTags,
    UnparseableNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw_text: String,
    pub think_text: Option<String>,
    pub answer_text: Option<String>,
    /// Present exactly when `parse_status` is `ok`.
    pub answer_value: Option<f64>,
    pub parse_status: ParseStatus,
}

/// Extracts reasoning and the numeric answer.
///
/// * `forced_cot`: both a think and an answer block are required.
/// * `optional_cot`: the answer block wins when present, otherwise the last
///   number outside any think block.
/// * `direct`: same as `optional_cot`; a bare trailing number is the norm.
pub fn parse_response(raw_text: &str, mode: PromptMode) -> ModelResponse {
    let think_text = answer_parse::think_block(raw_text).map(|s| s.trim().to_string());
    let answer_text = answer_parse::answer_block(raw_text).map(|s| s.trim().to_string());
    let mut resp = ModelResponse {
        raw_text: raw_text.to_string(),
        think_text,
        answer_text,
        answer_value: None,
        parse_status: ParseStatus::UnparseableNumber,
    };
    if mode == PromptMode::ForcedCot && (resp.think_text.is_none() || resp.answer_text.is_none()) {
        resp.parse_status = ParseStatus::MissingTags;
        return resp;
    }
    let value = match &resp.answer_text {
        Some(a) => answer_parse::last_number(a),
        None => answer_parse::last_number(&answer_parse::strip_think(raw_text)),
    };
    if let Some(v) = value {
        resp.answer_value = Some(v);
        resp.parse_status = ParseStatus::Ok;
    }
    resp
}

/// `|a_pred - a_gt| <= tau * |a_gt|`, evaluated as a relative error.
pub fn relaxed_match(a_pred: f64, a_gt: f64, tau: f64) -> Result<bool, EvalError> {
    let d = relative_error(a_pred, a_gt).map_err(|_| EvalError::ZeroGroundTruth)?;
    Ok(d <= tau)
}

/// Correct/total counts; merging is associative so scoring can be sharded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub n: usize,
    pub correct: usize,
}

impl Tally {
    pub fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += usize::from(correct);
    }

    pub fn merge(self, other: Tally) -> Tally {
        Tally {
            n: self.n + other.n,
            correct: self.correct + other.correct,
        }
    }

    /// Percentage correct, or `None` for an empty cell.
    pub fn accuracy(&self) -> Option<f64> {
        (self.n > 0).then(|| 100.0 * self.correct as f64 / self.n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub source: Source,
    pub chart_type: ChartType,
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau: f64,
    /// Benchmark columns: 7 synthetic types, then 3 real types.
    pub cells: Vec<CellReport>,
    pub overall_n: usize,
    pub overall_correct: usize,
    pub overall: Option<f64>,
    /// Items with no response; counted incorrect.
    pub missing: usize,
    /// Responses without a usable number; counted incorrect.
    pub unparseable: usize,
}

/// The ten report columns in benchmark order.
pub fn report_columns() -> Vec<(Source, ChartType)> {
    ChartType::ALL
        .iter()
        .map(|&t| (Source::Synthetic, t))
        .chain(REAL_TYPES.iter().map(|&t| (Source::Real, t)))
        .collect()
}

/// Scores responses against the dataset. Items without a response and
/// responses without a number both count as incorrect. Overall accuracy is
/// micro-averaged over items.
pub fn evaluate_run(
    responses: &[(String, ModelResponse)],
    items: &[QaItem],
    tau: f64,
) -> Result<EvalReport, EvalError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(EvalError::NonPositiveTau(tau));
    }
    let by_id: HashMap<&str, &QaItem> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut unknown: Vec<String> = responses
        .iter()
        .filter(|(id, _)| !by_id.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(EvalError::UnknownItems(unknown));
    }
    let mut seen = HashSet::new();
    let mut dupes: Vec<String> = responses
        .iter()
        .filter(|(id, _)| !seen.insert(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    if !dupes.is_empty() {
        dupes.sort();
        dupes.dedup();
        return Err(EvalError::DuplicateResponses(dupes));
    }

    let answered: HashMap<&str, &ModelResponse> = responses.iter().map(|(id, r)| (id.as_str(), r)).collect();
    let mut tallies: BTreeMap<(Source, ChartType), Tally> = BTreeMap::new();
    let (mut missing, mut unparseable) = (0, 0);
    for item in items {
        let correct = match answered.get(item.item_id.as_str()) {
            None => {
                missing += 1;
                false
            }
            Some(r) => match r.answer_value {
                Some(v) => relaxed_match(v, item.answer_gt, tau)?,
                None => {
                    unparseable += 1;
                    false
                }
            },
        };
        tallies.entry((item.source, item.chart_type)).or_default().add(correct);
    }

    let cells: Vec<CellReport> = report_columns()
        .into_iter()
        .map(|(source, chart_type)| {
            let t = tallies.get(&(source, chart_type)).copied().unwrap_or_default();
            CellReport {
                source,
                chart_type,
                n: t.n,
                correct: t.correct,
                accuracy: t.accuracy(),
            }
        })
        .collect();
    // tallies may hold cells outside the columns (e.g. a real radar item)
    let overall = tallies.values().fold(Tally::default(), |a, &b| a.merge(b));
    Ok(EvalReport {
        tau,
        cells,
        overall_n: overall.n,
        overall_correct: overall.correct,
        overall: overall.accuracy(),
        missing,
        unparseable,
    })
}

impl EvalReport {
    pub fn cell(&self, source: Source, chart_type: ChartType) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.source == source && c.chart_type == chart_type)
    }

    /// Aligned text table in benchmark column order.
    pub fn to_text_table(&self) -> String {
        fn pct(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |a| format!("{a:.1}"))
        }
        let mut header = vec![String::new()];
        let mut group = vec![String::new()];
        let mut acc = vec!["Accuracy".to_string()];
        let mut n = vec!["n".to_string()];
        for c in &self.cells {
            group.push(match c.source {
                Source::Synthetic => "Synthetic".into(),
                Source::Real => "Real".into(),
            });
            let name = c.chart_type.as_str();
            let mut title = name.to_string();
            title[..1].make_ascii_uppercase();
            header.push(title);
            acc.push(pct(c.accuracy));
            n.push(c.n.to_string());
        }
        group.push(String::new());
        header.push("Overall".into());
        acc.push(pct(self.overall));
        n.push(self.overall_n.to_string());

        let rows = [group, header, acc, n];
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (v, w))| if j == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 1 {
                let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        let _ = writeln!(
            out,
            "\ntau = {}; missing = {}; unparseable = {}",
            self.tau, self.missing, self.unparseable
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, gt: f64, source: Source, t: ChartType) -> QaItem {
        QaItem {
            item_id: id.into(),
            chart_ref: id.into(),
            question: "q".into(),
            answer_gt: gt,
            chart_type: t,
            source,
            topic: "finance".into(),
            unit: None,
        }
    }

    fn answer(v: &str) -> ModelResponse {
        parse_response(&format!("<think>t</think><answer>{v}</answer>"), PromptMode::ForcedCot)
    }

    #[test]
    fn parse_examples() {
        let r = parse_response(
            "<think>axis max 100, bar ≈ 3/4</think><answer>75</answer>",
            PromptMode::ForcedCot,
        );
        assert_eq!((r.answer_value, r.parse_status), (Some(75.0), ParseStatus::Ok));
        assert_eq!(r.think_text.as_deref(), Some("axis max 100, bar ≈ 3/4"));

        let r = parse_response("The value is about 1.2 million", PromptMode::Direct);
        assert_eq!(r.answer_value, Some(1_200_000.0));

        let r = parse_response("<answer>unclear</answer>", PromptMode::ForcedCot);
        assert_eq!(r.parse_status, ParseStatus::MissingTags);
        let r = parse_response("<think>x</think><answer>unclear</answer>", PromptMode::ForcedCot);
        assert_eq!((r.answer_value, r.parse_status), (None, ParseStatus::UnparseableNumber));
        let r = parse_response("<answer>unclear</answer>", PromptMode::OptionalCot);
        assert_eq!(r.parse_status, ParseStatus::UnparseableNumber);
    }

    #[test]
    fn optional_cot_ignores_numbers_in_reasoning() {
        let r = parse_response("<think>ticks at 20 and 40</think> so about 33", PromptMode::OptionalCot);
        assert_eq!(r.answer_value, Some(33.0));
        let r = parse_response("<think>ticks at 20 and 40</think>", PromptMode::OptionalCot);
        assert_eq!(r.answer_value, None);
    }

    #[test]
    fn relaxed_match_examples() {
        assert!(relaxed_match(100.0, 100.0, DEFAULT_TAU).unwrap());
        assert!(relaxed_match(102.0, 100.0, DEFAULT_TAU).unwrap());
        assert!(relaxed_match(98.0, 100.0, DEFAULT_TAU).unwrap());
        assert!(!relaxed_match(102.0001, 100.0, DEFAULT_TAU).unwrap());
        // |−50.5 − (−50)| / |−50| = 0.5 / 50 = 0.01
        assert!(relaxed_match(-50.5, -50.0, DEFAULT_TAU).unwrap());
        assert!(!relaxed_match(50.5, -50.0, DEFAULT_TAU).unwrap());
        assert_eq!(relaxed_match(1.0, 0.0, DEFAULT_TAU), Err(EvalError::ZeroGroundTruth));
    }

    #[test]
    fn perfect_and_empty_runs() {
        let items: Vec<QaItem> = report_columns()
            .into_iter()
            .enumerate()
            .map(|(i, (s, t))| item(&format!("i{i}"), 10.0 + i as f64, s, t))
            .collect();
        let perfect: Vec<(String, ModelResponse)> = items
            .iter()
            .map(|i| (i.item_id.clone(), answer(&i.answer_gt.to_string())))
            .collect();
        let r = evaluate_run(&perfect, &items, DEFAULT_TAU).unwrap();
        assert_eq!(r.cells.len(), 10);
        assert!(r.cells.iter().all(|c| c.accuracy == Some(100.0)));
        assert_eq!(r.overall, Some(100.0));

        let r = evaluate_run(&[], &items, DEFAULT_TAU).unwrap();
        assert!(r.cells.iter().all(|c| c.accuracy == Some(0.0)));
        assert_eq!(r.missing, items.len());
    }

    #[test]
    fn seven_of_ten_is_seventy() {
        let items: Vec<QaItem> = (0..10)
            .map(|i| item(&format!("q{i}"), 50.0, Source::Synthetic, ChartType::Bar))
            .collect();
        // hand count: 50, 50.5, 51, 49, 49.5, 51, 50.9 are within 1.0; 52.5, 45, 60 are not
        let preds = ["50", "50.5", "51", "49", "49.5", "51", "50.9", "52.5", "45", "60"];
        let responses: Vec<(String, ModelResponse)> = items
            .iter()
            .zip(preds)
            .map(|(i, p)| (i.item_id.clone(), answer(p)))
            .collect();
        let r = evaluate_run(&responses, &items, DEFAULT_TAU).unwrap();
        assert_eq!(r.overall, Some(70.0));
        assert_eq!(r.overall_correct, 7);
    }

    #[test]
    fn unknown_and_duplicate_ids_are_errors() {
        let items = vec![item("a", 1.0, Source::Synthetic, ChartType::Bar)];
        let err = evaluate_run(&[("zz".into(), answer("1"))], &items, DEFAULT_TAU).unwrap_err();
        assert_eq!(err, EvalError::UnknownItems(vec!["zz".into()]));
        assert!(err.to_string().contains("zz"));
        let dup = vec![("a".to_string(), answer("1")), ("a".to_string(), answer("1"))];
        assert!(matches!(
            evaluate_run(&dup, &items, DEFAULT_TAU),
            Err(EvalError::DuplicateResponses(_))
        ));
    }

    #[test]
    fn unparseable_counted_incorrect() {
        let items = vec![
            item("a", 1.0, Source::Synthetic, ChartType::Bar),
            item("b", 1.0, Source::Real, ChartType::Line),
        ];
        let r = evaluate_run(
            &[("a".into(), answer("n/a")), ("b".into(), answer("1"))],
            &items,
            DEFAULT_TAU,
        )
        .unwrap();
        assert_eq!((r.unparseable, r.overall_correct, r.overall), (1, 1, Some(50.0)));
    }

    #[test]
    fn text_table_has_benchmark_header_order() {
        let items = vec![item("a", 1.0, Source::Synthetic, ChartType::Bar)];
        let r = evaluate_run(&[], &items, DEFAULT_TAU).unwrap();
        let table = r.to_text_table();
        let header = table.lines().nth(1).unwrap();
        let cols: Vec<&str> = header.split_whitespace().collect();
        assert_eq!(
            cols,
            ["Box", "Area", "Radar", "Scatter", "Bar", "Line", "Combo", "Bar", "Line", "Combo", "Overall"]
        );
    }
}
