//! Training-data curation: multi-round inference logs, the boundary filter
//! for RL data, and validated CoT distillation for SFT data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer_parse;
use crate::canonical;
use crate::chart_model::format_tick;
use crate::gen_client::{Client, ClientError, ImageInput, Prompt};
use crate::prompts;
use crate::qa_engine::{QaItem, Source};
use crate::response_eval::{parse_response, relaxed_match, PromptMode, DEFAULT_TAU};

pub const DEFAULT_LEAK_PHRASES: [&str; 4] = ["original answer", "given answer", "ground truth", "provided answer"];
pub const DEFAULT_SFT_TARGET: usize = 68_500;
pub const DEFAULT_RL_TARGET: usize = 3_400;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("round plan is empty")]
    EmptyPlan,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("log row {item_id} repeats round {round_index}")]
    DuplicateRound { item_id: String, round_index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundPlanEntry {
    pub prompt_mode: PromptMode,
    pub temperature: f64,
}

/// Direct greedy, direct sampled, forced CoT sampled, optional CoT sampled.
pub fn default_round_plan() -> Vec<RoundPlanEntry> {
    [
        (PromptMode::Direct, 0.0),
        (PromptMode::Direct, 0.9),
        (PromptMode::ForcedCot, 0.9),
        (PromptMode::OptionalCot, 0.9),
    ]
    .into_iter()
    .map(|(prompt_mode, temperature)| RoundPlanEntry {
        prompt_mode,
        temperature,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round_index: usize,
    pub prompt_mode: PromptMode,
    pub temperature: f64,
    pub raw_text: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-item round results, keyed and ordered by item id; each row is kept
/// sorted by round index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceLog {
    pub rows: BTreeMap<String, Vec<RoundResult>>,
}

/// One line of the persisted log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogLine {
    item_id: String,
    #[serde(flatten)]
    result: RoundResult,
}

impl InferenceLog {
    pub fn insert(&mut self, item_id: &str, result: RoundResult) -> Result<(), CurationError> {
        let row = self.rows.entry(item_id.to_string()).or_default();
        match row.binary_search_by_key(&result.round_index, |r| r.round_index) {
            Ok(_) => Err(CurationError::DuplicateRound {
                item_id: item_id.to_string(),
                round_index: result.round_index,
            }),
            Err(pos) => {
                row.insert(pos, result);
                Ok(())
            }
        }
    }

    pub fn to_jsonl(&self) -> String {
        let lines: Vec<LogLine> = self
            .rows
            .iter()
            .flat_map(|(id, row)| {
                row.iter().map(|r| LogLine {
                    item_id: id.clone(),
                    result: r.clone(),
                })
            })
            .collect();
        canonical::to_jsonl(&lines).expect("log serializes")
    }

    pub fn from_jsonl(text: &str) -> Result<Self, (usize, String)> {
        let lines: Vec<LogLine> = canonical::from_jsonl(text).map_err(|(l, e)| (l, e.to_string()))?;
        let mut log = InferenceLog::default();
        for (i, line) in lines.into_iter().enumerate() {
            log.insert(&line.item_id, line.result)
                .map_err(|e| (i + 1, e.to_string()))?;
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<(), CurationError> {
        fs::write(path, self.to_jsonl()).map_err(|source| CurationError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CurationError> {
        let text = fs::read_to_string(path).map_err(|source| CurationError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_jsonl(&text).map_err(|(line, msg)| CurationError::Json {
            path: path.to_path_buf(),
            line,
            source: serde::de::Error::custom(msg),
        })
    }
}

/// Where an interrupted run should pick up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeCursor {
    pub next_round: usize,
    pub plan: Vec<RoundPlanEntry>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundsOutcome {
    pub log: InferenceLog,
    /// Set when a hard client failure stopped the run. Rounds before
    /// `next_round` are complete in `log`; the failed round is not.
    pub cursor: Option<ResumeCursor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub concurrency: usize,
    pub tau: f64,
    /// First plan entry to run; earlier rounds are expected in the log.
    pub start_round: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            concurrency: 4,
            tau: DEFAULT_TAU,
            start_round: 0,
        }
    }
}

/// Supplies the image for an item; `Ok(None)` sends the question alone.
pub type ImageLoader<'a> = dyn Fn(&QaItem) -> Result<Option<ImageInput>, String> + Sync + 'a;

/// Loads images from a dataset store: `images/{chart_ref}.svg` for synthetic
/// items, the stored path for real ones.
pub fn store_images(root: &Path) -> impl Fn(&QaItem) -> Result<Option<ImageInput>, String> + Sync + '_ {
    move |item: &QaItem| {
        let path = match item.source {
            Source::Synthetic => root.join("images").join(format!("{}.svg", item.chart_ref)),
            Source::Real => root.join(&item.chart_ref),
        };
        ImageInput::from_path(&path)
            .map(Some)
            .map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Runs `f` over `0..n` on up to `workers` threads. Each result lands at
/// its own index. Once `stop` is set, no new indices are started.
fn parallel_indexed<T, F>(n: usize, workers: usize, stop: &AtomicBool, f: F) -> Vec<Option<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("slot lock poisoned")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("slot lock poisoned")
}

/// One inference pass per plan entry over every item. Calls within a round
/// run in parallel; results are merged by (item id, round index), so the log
/// does not depend on scheduling. Per-request failures are logged as
/// incorrect with an error note. A hard client failure (auth, exhausted
/// retries) stops the run and returns a resumption cursor.
pub fn run_rounds(
    items: &[QaItem],
    images: &ImageLoader<'_>,
    client: &Client,
    plan: &[RoundPlanEntry],
    options: RunOptions,
    existing: InferenceLog,
) -> Result<RoundsOutcome, CurationError> {
    if plan.is_empty() {
        return Err(CurationError::EmptyPlan);
    }
    let mut log = existing;
    for (round_index, entry) in plan.iter().enumerate().skip(options.start_round) {
        let stop = AtomicBool::new(false);
        let hard: Mutex<Option<ClientError>> = Mutex::new(None);
        let results = parallel_indexed(items.len(), options.concurrency, &stop, |i| {
            let item = &items[i];
            let (raw_text, error) = match images(item) {
                Err(e) => (String::new(), Some(format!("image: {e}"))),
                Ok(image) => {
                    let mut prompt = Prompt::new(prompts::system_for(entry.prompt_mode), item.question.clone())
                        .with_temperature(entry.temperature);
                    prompt.image = image;
                    match client.complete(&prompt) {
                        Ok(text) => (text, None),
                        Err(e) if e.is_hard_failure() => {
                            stop.store(true, Ordering::Relaxed);
                            hard.lock().expect("lock poisoned").get_or_insert(e.clone());
                            (String::new(), Some(e.to_string()))
                        }
                        Err(e) => (String::new(), Some(e.to_string())),
                    }
                }
            };
            let correct = error.is_none()
                && parse_response(&raw_text, entry.prompt_mode)
                    .answer_value
                    .is_some_and(|v| relaxed_match(v, item.answer_gt, options.tau).unwrap_or(false));
            RoundResult {
                round_index,
                prompt_mode: entry.prompt_mode,
                temperature: entry.temperature,
                raw_text,
                correct,
                error,
            }
        });
        if let Some(e) = hard.into_inner().expect("lock poisoned") {
            return Ok(RoundsOutcome {
                log,
                cursor: Some(ResumeCursor {
                    next_round: round_index,
                    plan: plan.to_vec(),
                    error: e.to_string(),
                }),
            });
        }
        for (item, r) in items.iter().zip(results) {
            log.insert(&item.item_id, r.expect("every slot filled when no hard failure"))?;
        }
    }
    Ok(RoundsOutcome { log, cursor: None })
}

/// Items answered correctly in at least one round and incorrectly in at
/// least one other.
pub fn boundary_filter(log: &InferenceLog) -> BTreeSet<String> {
    log.rows
        .iter()
        .filter(|(_, row)| row.iter().any(|r| r.correct) && row.iter().any(|r| !r.correct))
        .map(|(id, _)| id.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// CoT validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotRejection {
    MissingTags,
    WrongAnswer,
    Leakage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakMode {
    /// Reject reasoning that mentions a configured phrase.
    #[default]
    Phrases,
    /// Additionally reject reasoning that contains the answer's digits.
    PhrasesAndValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeakConfig {
    pub phrases: Vec<String>,
    pub mode: LeakMode,
}

impl Default for LeakConfig {
    fn default() -> Self {
        Self {
            phrases: DEFAULT_LEAK_PHRASES.iter().map(|s| s.to_string()).collect(),
            mode: LeakMode::Phrases,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedCot {
    pub think_text: String,
    pub answer_text: String,
}

/// Tag contents when the text holds exactly one think block followed by
/// exactly one answer block, neither nested in the other.
fn tagged_blocks(raw: &str) -> Option<(&str, &str)> {
    let lower = raw.to_ascii_lowercase();
    let once = |tag: &str| {
        let mut it = lower.match_indices(tag);
        match (it.next(), it.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    };
    let (t0, t1) = (once("<think>")?, once("</think>")?);
    let (a0, a1) = (once("<answer>")?, once("</answer>")?);
    if !(t0 < t1 && t1 < a0 && a0 < a1) {
        return None;
    }
    let think = &raw[t0 + "<think>".len()..t1];
    let answer = &raw[a0 + "<answer>".len()..a1];
    (!think.trim().is_empty() && !answer.trim().is_empty()).then_some((think.trim(), answer.trim()))
}

/// Structural check, then answer verification, then leakage detection.
pub fn validate_cot(raw_text: &str, a_gt: f64, leak: &LeakConfig) -> Result<ValidatedCot, CotRejection> {
    let (think, answer) = tagged_blocks(raw_text).ok_or(CotRejection::MissingTags)?;
    let exact = answer == format_tick(a_gt);
    let close = answer_parse::last_number(answer).is_some_and(|v| relaxed_match(v, a_gt, DEFAULT_TAU).unwrap_or(false));
    if !exact && !close {
        return Err(CotRejection::WrongAnswer);
    }
    let think_lower = think.to_lowercase();
    if leak.phrases.iter().any(|p| think_lower.contains(&p.to_lowercase())) {
        return Err(CotRejection::Leakage);
    }
    if leak.mode == LeakMode::PhrasesAndValue && answer_parse::numbers(think).contains(&a_gt) {
        return Err(CotRejection::Leakage);
    }
    Ok(ValidatedCot {
        think_text: think.to_string(),
        answer_text: answer.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotSample {
    pub item_id: String,
    pub chart_ref: String,
    pub question: String,
    pub think_text: String,
    pub answer_text: String,
    pub source_model: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillStats {
    pub attempts: usize,
    pub accepted: usize,
    pub missing_tags: usize,
    pub wrong_answer: usize,
    pub leakage: usize,
    /// Requests that failed at the client.
    pub errors: usize,
}

impl DistillStats {
    fn reject(&mut self, r: CotRejection) {
        match r {
            CotRejection::MissingTags => self.missing_tags += 1,
            CotRejection::WrongAnswer => self.wrong_answer += 1,
            CotRejection::Leakage => self.leakage += 1,
        }
    }

    pub fn rejected(&self) -> usize {
        self.missing_tags + self.wrong_answer + self.leakage
    }

    /// Share of validated attempts rejected for `r`, in percent.
    pub fn rejection_rate(&self, r: CotRejection) -> f64 {
        let validated = self.accepted + self.rejected();
        if validated == 0 {
            return 0.0;
        }
        let k = match r {
            CotRejection::MissingTags => self.missing_tags,
            CotRejection::WrongAnswer => self.wrong_answer,
            CotRejection::Leakage => self.leakage,
        };
        100.0 * k as f64 / validated as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub samples: Vec<CotSample>,
    pub stats: DistillStats,
    pub target: usize,
    /// Samples still missing when the items ran out.
    pub shortfall: usize,
    /// Hard client failure that ended the run early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOptions {
    pub target_count: usize,
    pub max_attempts_per_item: usize,
    pub concurrency: usize,
    pub leak: LeakConfig,
}

impl Default for DistillOptions {
    fn default() -> Self {
        Self {
            target_count: DEFAULT_SFT_TARGET,
            max_attempts_per_item: 2,
            concurrency: 4,
            leak: LeakConfig::default(),
        }
    }
}

pub fn distill_prompt(item: &QaItem) -> Prompt {
    let user = prompts::fill(
        prompts::DISTILL,
        &[("question", &item.question), ("answer", &format_tick(item.answer_gt))],
    );
    Prompt::new("You write step-by-step chart-reading solutions.", user)
}

struct ItemOutcome {
    sample: Option<CotSample>,
    stats: DistillStats,
    hard: Option<ClientError>,
}

fn distill_item(item: &QaItem, images: &ImageLoader<'_>, teacher: &Client, options: &DistillOptions) -> ItemOutcome {
    let mut stats = DistillStats::default();
    let mut prompt = distill_prompt(item);
    match images(item) {
        Ok(img) => prompt.image = img,
        Err(_) => {
            stats.errors += 1;
            return ItemOutcome {
                sample: None,
                stats,
                hard: None,
            };
        }
    }
    for _ in 0..options.max_attempts_per_item.max(1) {
        stats.attempts += 1;
        let raw = match teacher.complete(&prompt) {
            Ok(raw) => raw,
            Err(e) if e.is_hard_failure() => {
                stats.errors += 1;
                return ItemOutcome {
                    sample: None,
                    stats,
                    hard: Some(e),
                };
            }
            Err(_) => {
                stats.errors += 1;
                continue;
            }
        };
        match validate_cot(&raw, item.answer_gt, &options.leak) {
            Ok(v) => {
                stats.accepted += 1;
                return ItemOutcome {
                    sample: Some(CotSample {
                        item_id: item.item_id.clone(),
                        chart_ref: item.chart_ref.clone(),
                        question: item.question.clone(),
                        think_text: v.think_text,
                        answer_text: v.answer_text,
                        source_model: teacher.config.model_name.clone(),
                    }),
                    stats,
                    hard: None,
                };
            }
            Err(r) => stats.reject(r),
        }
    }
    ItemOutcome {
        sample: None,
        stats,
        hard: None,
    }
}

/// Queries the teacher item by item until `target_count` samples validate.
/// Items are processed in parallel batches but accounted in item order, and
/// accounting stops at the item that reaches the target, so samples and
/// stats do not depend on `concurrency`.
pub fn distill_cot(
    items: &[QaItem],
    images: &ImageLoader<'_>,
    teacher: &Client,
    options: &DistillOptions,
) -> DistillReport {
    let mut report = DistillReport {
        samples: Vec::new(),
        stats: DistillStats::default(),
        target: options.target_count,
        shortfall: 0,
        aborted: None,
    };
    let batch = options.concurrency.max(1);
    'outer: for chunk in items.chunks(batch) {
        if report.samples.len() >= options.target_count {
            break;
        }
        let never = AtomicBool::new(false);
        let outcomes = parallel_indexed(chunk.len(), batch, &never, |i| {
            distill_item(&chunk[i], images, teacher, options)
        });
        for o in outcomes.into_iter().map(|o| o.expect("slot filled")) {
            if report.samples.len() >= options.target_count {
                break 'outer;
            }
            let s = o.stats;
            let st = &mut report.stats;
            st.attempts += s.attempts;
            st.accepted += s.accepted;
            st.missing_tags += s.missing_tags;
            st.wrong_answer += s.wrong_answer;
            st.leakage += s.leakage;
            st.errors += s.errors;
            report.samples.extend(o.sample);
            if let Some(e) = o.hard {
                report.aborted = Some(e.to_string());
                break 'outer;
            }
        }
    }
    report.shortfall = options.target_count.saturating_sub(report.samples.len());
    report
}
