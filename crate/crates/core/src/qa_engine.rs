//! Question generation, verification, real-chart import and dataset builds.
//!
//! Synthetic questions are template instantiations over a [`ChartSpec`]; the
//! answer is looked up from the chart spec, never estimated. Templates are listed
//! in `docs/templates.md`. Every question can be parsed back into its target,
//! which is how [`verify_qa`] recomputes the answer.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::chart_model::{
    box_stats, format_tick, number_formats, sample_spec, validate_spec, ChartSpec, ChartType, Difficulty, Mark,
    ModelError, ValidationReport, SCHEMA_VERSION,
};
use crate::renderer::{self, RenderError};
use crate::rng::{derive_seed, string_key, SeededRng};
use crate::topics::TopicCatalog;

/// Seeded attempts per synthetic item before the build gives up on it.
const MAX_ITEM_ATTEMPTS: u64 = 16;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("spec {0} has no usable target: every candidate answer is zero or would leak into the question")]
    NoUsableTarget(String),
    #[error("spec failed validation:\n{0}")]
    InvalidSpec(ValidationReport),
    #[error("dangling chart reference {chart_ref:?} for item {item_id}")]
    DanglingReference { item_id: String, chart_ref: String },
    #[error("verification requires a synthetic item, {0} is real")]
    NotSynthetic(String),
    #[error("not enough {origin} {chart_type} items: requested {requested}, available {available}")]
    Shortfall {
        origin: Source,
        chart_type: ChartType,
        requested: usize,
        available: usize,
    },
    #[error("synthetic {chart_type} item {index} failed after {MAX_ITEM_ATTEMPTS} attempts: {reason}")]
    GenerationFailed {
        chart_type: ChartType,
        index: usize,
        reason: String,
    },
    #[error("duplicate item id {0}")]
    DuplicateId(String),
    #[error("real charts support bar, line and combo only; got {0}")]
    UnsupportedRealType(ChartType),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Render(#[from] RenderError),
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
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> QaError + '_ {
    move |source| QaError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path, line: usize) -> impl FnOnce(serde_json::Error) -> QaError + '_ {
    move |source| QaError::Json {
        path: path.to_path_buf(),
        line,
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Real,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Synthetic => "synthetic",
            Source::Real => "real",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Real charts only come in these types.
pub const REAL_TYPES: [ChartType; 3] = [ChartType::Bar, ChartType::Line, ChartType::Combo];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub item_id: String,
    /// Spec id for synthetic items, store-relative image path for real ones.
    pub chart_ref: String,
    pub question: String,
    pub answer_gt: f64,
    pub chart_type: ChartType,
    pub source: Source,
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

pub type Counts = BTreeMap<Source, BTreeMap<ChartType, usize>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub items: Vec<String>,
    pub counts: Counts,
    pub seed: u64,
    pub schema_version: u32,
}

impl DatasetManifest {
    pub fn total(&self) -> usize {
        self.counts.values().flat_map(|m| m.values()).sum()
    }

    pub fn source_total(&self, source: Source) -> usize {
        self.counts.get(&source).map_or(0, |m| m.values().sum())
    }
}

/// Manifest plus the records it lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub items: Vec<QaItem>,
    /// Specs of the synthetic items, ordered like `items`.
    pub specs: Vec<ChartSpec>,
}

// ---------------------------------------------------------------------------
// Templates

static CATEGORY_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^What is the value of the series "(?P<series>[^"]*)" at "(?P<cat>[^"]*)"\?"#).unwrap()
});
static SCATTER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^What is the y-value of the "(?P<series>[^"]*)" point located at x = (?P<x>-?[0-9]+(?:\.[0-9]+)?)\?"#)
        .unwrap()
});
static BOX_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^What is the (?P<stat>median|lower quartile|upper quartile|lower whisker|upper whisker) of "(?P<series>[^"]*)"\?"#)
        .unwrap()
});

/// Box-plot statistics a question can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxStat {
    Median,
    LowerQuartile,
    UpperQuartile,
    LowerWhisker,
    UpperWhisker,
}

impl BoxStat {
    pub const ALL: [BoxStat; 5] = [
        BoxStat::Median,
        BoxStat::LowerQuartile,
        BoxStat::UpperQuartile,
        BoxStat::LowerWhisker,
        BoxStat::UpperWhisker,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            BoxStat::Median => "median",
            BoxStat::LowerQuartile => "lower quartile",
            BoxStat::UpperQuartile => "upper quartile",
            BoxStat::LowerWhisker => "lower whisker",
            BoxStat::UpperWhisker => "upper whisker",
        }
    }

    fn from_phrase(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.phrase() == s)
    }

    fn of(self, values: &[f64]) -> f64 {
        let b = box_stats(values);
        match self {
            BoxStat::Median => b.median,
            BoxStat::LowerQuartile => b.q1,
            BoxStat::UpperQuartile => b.q3,
            BoxStat::LowerWhisker => b.lower_whisker,
            BoxStat::UpperWhisker => b.upper_whisker,
        }
    }
}

/// What a question asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Category { series: String, category: String },
    Point { series: String, x: f64 },
    Statistic { series: String, stat: BoxStat },
}

impl Target {
    fn series(&self) -> &str {
        match self {
            Target::Category { series, .. } | Target::Point { series, .. } | Target::Statistic { series, .. } => series,
        }
    }
}

/// Value of `target` in `spec`, or `None` when it names nothing that exists.
pub fn resolve_target(spec: &ChartSpec, target: &Target) -> Option<f64> {
    let series = spec.series_named(target.series())?;
    match target {
        Target::Category { category, .. } if spec.chart_type.is_categorical() => series.value_at(category),
        Target::Point { x, .. } if spec.chart_type == ChartType::Scatter => {
            let mut hits = series.points.iter().filter(|p| p.x == Some(*x));
            match (hits.next(), hits.next()) {
                (Some(p), None) => Some(p.y),
                _ => None,
            }
        }
        Target::Statistic { stat, .. } if spec.chart_type == ChartType::Box && !series.points.is_empty() => {
            Some(stat.of(&series.raw_values()))
        }
        _ => None,
    }
}

/// Recovers the target from question text.
pub fn parse_question(question: &str) -> Option<Target> {
    if let Some(c) = CATEGORY_RE.captures(question) {
        return Some(Target::Category {
            series: c["series"].to_string(),
            category: c["cat"].to_string(),
        });
    }
    if let Some(c) = SCATTER_RE.captures(question) {
        return Some(Target::Point {
            series: c["series"].to_string(),
            x: c["x"].parse().ok()?,
        });
    }
    let c = BOX_RE.captures(question)?;
    Some(Target::Statistic {
        series: c["series"].to_string(),
        stat: BoxStat::from_phrase(&c["stat"])?,
    })
}

fn question_text(spec: &ChartSpec, target: &Target, unit: Option<&str>) -> String {
    let mut q = match target {
        Target::Category { series, category } => {
            format!("What is the value of the series \"{series}\" at \"{category}\"?")
        }
        Target::Point { series, x } => {
            format!(
                "What is the y-value of the \"{series}\" point located at x = {}?",
                format_tick(*x)
            )
        }
        Target::Statistic { series, stat } => format!("What is the {} of \"{series}\"?", stat.phrase()),
    };
    if let Some(s) = spec.series_named(target.series()) {
        if spec.chart_type == ChartType::Combo && spec.y_axis_secondary.is_some() && s.mark == Mark::Line {
            q.push_str(" Read it against the right-hand axis.");
        }
    }
    if let Some(u) = unit {
        q.push_str(&format!(" Answer in {u}."));
    }
    q
}

fn candidate_targets(spec: &ChartSpec) -> Vec<Target> {
    let mut out = Vec::new();
    for s in &spec.series {
        match spec.chart_type {
            ChartType::Box => out.extend(BoxStat::ALL.into_iter().map(|stat| Target::Statistic {
                series: s.name.clone(),
                stat,
            })),
            ChartType::Scatter => out.extend(s.points.iter().filter_map(|p| {
                p.x.map(|x| Target::Point {
                    series: s.name.clone(),
                    x,
                })
            })),
            _ => out.extend(s.points.iter().filter_map(|p| {
                p.label.as_ref().map(|c| Target::Category {
                    series: s.name.clone(),
                    category: c.clone(),
                })
            })),
        }
    }
    out
}

/// True when any exact rendering of `answer` occurs in `question`.
pub fn leaks_answer(question: &str, answer: f64) -> bool {
    number_formats(answer).iter().any(|f| question.contains(f.as_str()))
}

fn synthetic_item_id(spec: &ChartSpec) -> String {
    format!("{}-q", spec.id)
}

/// One question per spec. The target is drawn with a seeded RNG from the
/// candidates whose answer is nonzero and does not appear in the question.
pub fn generate_qa(spec: &ChartSpec, rng_seed: u64) -> Result<QaItem, QaError> {
    let report = validate_spec(spec);
    if !report.is_clean() {
        return Err(QaError::InvalidSpec(report));
    }
    let mut usable = Vec::new();
    for target in candidate_targets(spec) {
        let Some(answer) = resolve_target(spec, &target) else {
            continue;
        };
        if answer == 0.0 {
            continue;
        }
        let series = spec.series_named(target.series()).expect("candidate series exists");
        let unit = spec.value_axis(series).unit.clone();
        let question = question_text(spec, &target, unit.as_deref());
        // the parse must round-trip, otherwise verification could not resolve it
        if parse_question(&question).as_ref() != Some(&target) || leaks_answer(&question, answer) {
            continue;
        }
        usable.push((question, answer, unit));
    }
    if usable.is_empty() {
        return Err(QaError::NoUsableTarget(spec.id.clone()));
    }
    let mut rng = SeededRng::new(derive_seed(rng_seed, &[string_key(&spec.id)]));
    let (question, answer_gt, unit) = usable.swap_remove(rng.below(usable.len() as u64) as usize);
    Ok(QaItem {
        item_id: synthetic_item_id(spec),
        chart_ref: spec.id.clone(),
        question,
        answer_gt,
        chart_type: spec.chart_type,
        source: Source::Synthetic,
        topic: spec.topic.clone(),
        unit,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail { reason: String },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// Recomputes the answer from the chart spec and compares it exactly.
pub fn verify_qa(item: &QaItem, spec: &ChartSpec) -> Result<Verdict, QaError> {
    if item.source != Source::Synthetic {
        return Err(QaError::NotSynthetic(item.item_id.clone()));
    }
    if item.chart_ref != spec.id {
        return Err(QaError::DanglingReference {
            item_id: item.item_id.clone(),
            chart_ref: item.chart_ref.clone(),
        });
    }
    let Some(expected) = parse_question(&item.question).and_then(|t| resolve_target(spec, &t)) else {
        return Ok(Verdict::Fail {
            reason: "unresolvable target".to_string(),
        });
    };
    if expected.to_bits() == item.answer_gt.to_bits() || expected == item.answer_gt {
        Ok(Verdict::Pass)
    } else {
        Ok(Verdict::Fail {
            reason: format!(
                "mismatch: expected {}, found {}",
                format_tick(expected),
                format_tick(item.answer_gt)
            ),
        })
    }
}

// ---------------------------------------------------------------------------
// Real charts

/// One line of `real_imports.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealImportRecord {
    pub image: PathBuf,
    pub question: String,
    pub answer: f64,
    pub chart_type: String,
    #[serde(default)]
    pub topic: String,
}

/// Vetted question for an image already on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealQaRecord {
    pub question: String,
    pub answer: f64,
    pub chart_type: String,
    #[serde(default)]
    pub topic: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// Position of the record in its input list.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportOutcome {
    pub items: Vec<QaItem>,
    pub rejections: Vec<Rejection>,
}

fn check_real_record(r: &RealQaRecord) -> Result<ChartType, String> {
    let t: ChartType = r.chart_type.parse().map_err(|e: ModelError| e.to_string())?;
    if !REAL_TYPES.contains(&t) {
        return Err(QaError::UnsupportedRealType(t).to_string());
    }
    if r.answer == 0.0 || !r.answer.is_finite() {
        return Err(format!("answer must be a finite nonzero number, got {}", r.answer));
    }
    if r.question.trim().is_empty() {
        return Err("empty question".to_string());
    }
    Ok(t)
}

/// Copies `image_path` into `images_dir` under a content-addressed name and
/// turns each acceptable record into a real item. `images_dir` is expected to
/// be the `images/` folder of a dataset store.
pub fn import_real_chart(
    image_path: &Path,
    records: &[RealQaRecord],
    images_dir: &Path,
) -> Result<ImportOutcome, QaError> {
    let bytes = fs::read(image_path).map_err(io_err(image_path))?;
    let digest = canonical::sha256_hex(&bytes);
    let ext = image_path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("bin")
        .to_ascii_lowercase();
    let file_name = format!("real-{}.{ext}", &digest[..12]);
    let chart_ref = format!("images/{file_name}");

    let mut out = ImportOutcome::default();
    for (index, r) in records.iter().enumerate() {
        match check_real_record(r) {
            Ok(chart_type) => {
                let key = format!("{digest}\n{index}\n{}", r.question);
                let hash = canonical::sha256_hex(key.as_bytes());
                out.items.push(QaItem {
                    item_id: format!("real-{chart_type}-{}", &hash[..12]),
                    chart_ref: chart_ref.clone(),
                    question: r.question.clone(),
                    answer_gt: r.answer,
                    chart_type,
                    source: Source::Real,
                    topic: r.topic.clone(),
                    unit: None,
                });
            }
            Err(reason) => out.rejections.push(Rejection { index, reason }),
        }
    }
    if !out.items.is_empty() {
        fs::create_dir_all(images_dir).map_err(io_err(images_dir))?;
        let dest = images_dir.join(&file_name);
        fs::write(&dest, &bytes).map_err(io_err(&dest))?;
    }
    Ok(out)
}

/// Imports every record of a `real_imports.jsonl` file. Relative image paths
/// resolve against the file's directory. Rejection indices are line indices
/// (0-based, blank lines skipped).
pub fn import_real_file(path: &Path, images_dir: &Path) -> Result<ImportOutcome, QaError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let records: Vec<RealImportRecord> = canonical::from_jsonl(&text).map_err(|(line, e)| json_err(path, line)(e))?;
    let base = path.parent().unwrap_or(Path::new("."));

    // group by image, keeping first-appearance order
    let mut groups: Vec<(PathBuf, Vec<(usize, RealQaRecord)>)> = Vec::new();
    for (i, r) in records.into_iter().enumerate() {
        let image = if r.image.is_absolute() {
            r.image.clone()
        } else {
            base.join(&r.image)
        };
        let rec = RealQaRecord {
            question: r.question,
            answer: r.answer,
            chart_type: r.chart_type,
            topic: r.topic,
        };
        match groups.iter_mut().find(|(p, _)| *p == image) {
            Some((_, g)) => g.push((i, rec)),
            None => groups.push((image, vec![(i, rec)])),
        }
    }

    let mut out = ImportOutcome::default();
    for (image, group) in groups {
        let recs: Vec<RealQaRecord> = group.iter().map(|(_, r)| r.clone()).collect();
        let part = import_real_chart(&image, &recs, images_dir)?;
        out.items.extend(part.items);
        out.rejections.extend(part.rejections.into_iter().map(|r| Rejection {
            index: group[r.index].0,
            reason: r.reason,
        }));
    }
    out.rejections.sort_by_key(|r| r.index);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dataset build

/// Synthetic counts per type at benchmark scale (2,101 in total).
pub const DEFAULT_SYNTHETIC_COUNTS: [(ChartType, usize); 7] = [
    (ChartType::Box, 505),
    (ChartType::Area, 130),
    (ChartType::Radar, 124),
    (ChartType::Scatter, 363),
    (ChartType::Bar, 284),
    (ChartType::Line, 240),
    (ChartType::Combo, 455),
];

/// Real counts per type at benchmark scale (352 in total).
pub const DEFAULT_REAL_COUNTS: [(ChartType, usize); 3] =
    [(ChartType::Bar, 112), (ChartType::Line, 115), (ChartType::Combo, 125)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub seed: u64,
    pub counts: Counts,
    /// Probability that a synthetic item is drawn at hard difficulty.
    pub hard_fraction: f64,
}

impl BuildConfig {
    /// Benchmark-scale counts, with real counts only when `with_real`.
    pub fn benchmark(seed: u64, with_real: bool) -> Self {
        let mut counts = Counts::new();
        counts.insert(Source::Synthetic, DEFAULT_SYNTHETIC_COUNTS.into_iter().collect());
        if with_real {
            counts.insert(Source::Real, DEFAULT_REAL_COUNTS.into_iter().collect());
        }
        Self {
            seed,
            counts,
            hard_fraction: 0.5,
        }
    }

    pub fn count(&self, source: Source, chart_type: ChartType) -> usize {
        self.counts
            .get(&source)
            .and_then(|m| m.get(&chart_type))
            .copied()
            .unwrap_or(0)
    }
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self::benchmark(crate::rng::DEFAULT_SEED, false)
    }
}

fn synthetic_item(
    config: &BuildConfig,
    topics: &TopicCatalog,
    topic_order: &[String],
    chart_type: ChartType,
    index: usize,
) -> Result<(QaItem, ChartSpec), QaError> {
    let type_key = ChartType::ALL.iter().position(|&t| t == chart_type).unwrap() as u64;
    let topic = &topic_order[index % topic_order.len()];
    let mut last_err = String::new();
    for attempt in 0..MAX_ITEM_ATTEMPTS {
        let item_seed = derive_seed(config.seed, &[type_key, index as u64, attempt]);
        let mut rng = SeededRng::new(item_seed);
        let difficulty = if rng.bernoulli(config.hard_fraction) {
            Difficulty::Hard
        } else {
            Difficulty::Easy
        };
        let spec = sample_spec(topics, item_seed, chart_type, topic, difficulty)?;
        match generate_qa(&spec, item_seed) {
            Ok(item) => match verify_qa(&item, &spec)? {
                Verdict::Pass => return Ok((item, spec)),
                Verdict::Fail { reason } => last_err = reason,
            },
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(QaError::GenerationFailed {
        chart_type,
        index,
        reason: last_err,
    })
}

/// Builds a dataset. Synthetic items are generated in parallel and every one
/// passes [`verify_qa`]; real items are taken from `real_pool` in item-id
/// order. The result is ordered by item id and depends only on the inputs.
pub fn build_dataset(config: &BuildConfig, topics: &TopicCatalog, real_pool: &[QaItem]) -> Result<Dataset, QaError> {
    if topics.is_empty() {
        return Err(QaError::Model(ModelError::UnknownTopic(String::new())));
    }
    let mut topic_order: Vec<String> = topics.names().into_iter().map(str::to_string).collect();
    SeededRng::new(derive_seed(config.seed, &[string_key("topics")])).shuffle(&mut topic_order);

    let mut real_items = Vec::new();
    for t in ChartType::ALL {
        let want = config.count(Source::Real, t);
        if want == 0 {
            continue;
        }
        if !REAL_TYPES.contains(&t) {
            return Err(QaError::Shortfall {
                origin: Source::Real,
                chart_type: t,
                requested: want,
                available: 0,
            });
        }
        let mut pool: Vec<&QaItem> = real_pool
            .iter()
            .filter(|i| i.source == Source::Real && i.chart_type == t)
            .collect();
        if pool.len() < want {
            return Err(QaError::Shortfall {
                origin: Source::Real,
                chart_type: t,
                requested: want,
                available: pool.len(),
            });
        }
        pool.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        real_items.extend(pool.into_iter().take(want).cloned());
    }

    let jobs: Vec<(ChartType, usize)> = ChartType::ALL
        .into_iter()
        .flat_map(|t| (0..config.count(Source::Synthetic, t)).map(move |i| (t, i)))
        .collect();
    let synthetic: Vec<(QaItem, ChartSpec)> = jobs
        .par_iter()
        .map(|&(t, i)| synthetic_item(config, topics, &topic_order, t, i))
        .collect::<Result<_, _>>()?;

    let pairs: Vec<(QaItem, Option<ChartSpec>)> = synthetic
        .into_iter()
        .map(|(item, spec)| (item, Some(spec)))
        .chain(real_items.into_iter().map(|i| (i, None)))
        .collect();
    assemble(pairs, config.seed)
}

/// Dataset over externally produced specs, e.g. candidates admitted by the
/// repair loop. Every spec must validate and its item must verify.
pub fn dataset_from_specs(specs: Vec<ChartSpec>, seed: u64) -> Result<Dataset, QaError> {
    let pairs = specs
        .into_par_iter()
        .map(|spec| {
            let item = generate_qa(&spec, seed)?;
            match verify_qa(&item, &spec)? {
                Verdict::Pass => Ok((item, Some(spec))),
                Verdict::Fail { reason } => Err(QaError::GenerationFailed {
                    chart_type: spec.chart_type,
                    index: 0,
                    reason,
                }),
            }
        })
        .collect::<Result<Vec<_>, QaError>>()?;
    assemble(pairs, seed)
}

/// Orders items by id, rejects duplicates and tallies the manifest.
fn assemble(mut pairs: Vec<(QaItem, Option<ChartSpec>)>, seed: u64) -> Result<Dataset, QaError> {
    pairs.sort_by(|a, b| a.0.item_id.cmp(&b.0.item_id));
    if let Some(w) = pairs.windows(2).find(|w| w[0].0.item_id == w[1].0.item_id) {
        return Err(QaError::DuplicateId(w[0].0.item_id.clone()));
    }
    let mut counts = Counts::new();
    for (item, _) in &pairs {
        *counts
            .entry(item.source)
            .or_default()
            .entry(item.chart_type)
            .or_default() += 1;
    }
    let (items, specs): (Vec<QaItem>, Vec<Option<ChartSpec>>) = pairs.into_iter().unzip();
    let ids: Vec<String> = items.iter().map(|i| i.item_id.clone()).collect();
    let id_digest = canonical::sha256_hex(format!("{seed}\n{}", ids.join("\n")).as_bytes());
    Ok(Dataset {
        manifest: DatasetManifest {
            dataset_id: format!("crb-{}", &id_digest[..12]),
            items: ids,
            counts,
            seed,
            schema_version: SCHEMA_VERSION,
        },
        items,
        specs: specs.into_iter().flatten().collect(),
    })
}

// ---------------------------------------------------------------------------
// Store

/// On-disk layout of a dataset:
///
/// ```text
/// manifest.json
/// items.jsonl
/// charts/{spec_id}.json
/// images/{spec_id}.svg
/// images/{spec_id}.meta.json
/// images/real-{sha12}.{ext}
/// ```
#[derive(Debug, Clone)]
pub struct DatasetStore {
    pub root: PathBuf,
}

impl DatasetStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn items_path(&self) -> PathBuf {
        self.root.join("items.jsonl")
    }

    pub fn charts_dir(&self) -> PathBuf {
        self.root.join("charts")
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    /// Writes specs, SVGs, items and manifest. Rendering runs in parallel.
    pub fn write(&self, dataset: &Dataset) -> Result<(), QaError> {
        let charts = self.charts_dir();
        let images = self.images_dir();
        for d in [&self.root, &charts, &images] {
            fs::create_dir_all(d).map_err(io_err(d))?;
        }
        dataset.specs.par_iter().try_for_each(|spec| -> Result<(), QaError> {
            let rendered = renderer::render(spec)?;
            let spec_path = charts.join(format!("{}.json", spec.id));
            let svg_path = images.join(format!("{}.svg", spec.id));
            let meta_path = images.join(format!("{}.meta.json", spec.id));
            fs::write(&spec_path, canonical::to_string_pretty(spec).expect("spec serializes"))
                .map_err(io_err(&spec_path))?;
            fs::write(&svg_path, &rendered.svg_text).map_err(io_err(&svg_path))?;
            fs::write(
                &meta_path,
                canonical::to_string_pretty(&rendered.meta(spec)).expect("meta serializes"),
            )
            .map_err(io_err(&meta_path))?;
            Ok(())
        })?;
        let items_path = self.items_path();
        fs::write(
            &items_path,
            canonical::to_jsonl(&dataset.items).expect("items serialize"),
        )
        .map_err(io_err(&items_path))?;
        let manifest_path = self.manifest_path();
        fs::write(
            &manifest_path,
            canonical::to_string_pretty(&dataset.manifest).expect("manifest serializes"),
        )
        .map_err(io_err(&manifest_path))?;
        Ok(())
    }

    pub fn read_manifest(&self) -> Result<DatasetManifest, QaError> {
        let p = self.manifest_path();
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        canonical::from_str(&text).map_err(json_err(&p, 0))
    }

    pub fn read_items(&self) -> Result<Vec<QaItem>, QaError> {
        let p = self.items_path();
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        canonical::from_jsonl(&text).map_err(|(line, e)| json_err(&p, line)(e))
    }

    pub fn read_spec(&self, spec_id: &str) -> Result<ChartSpec, QaError> {
        let p = self.charts_dir().join(format!("{spec_id}.json"));
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        canonical::from_str(&text).map_err(json_err(&p, 0))
    }

    /// Loads manifest, items and synthetic specs, checking that the manifest
    /// and the item file agree.
    pub fn open(&self) -> Result<Dataset, QaError> {
        let manifest = self.read_manifest()?;
        let items = self.read_items()?;
        let listed: HashSet<&str> = manifest.items.iter().map(String::as_str).collect();
        if let Some(stray) = items.iter().find(|i| !listed.contains(i.item_id.as_str())) {
            return Err(QaError::DanglingReference {
                item_id: stray.item_id.clone(),
                chart_ref: stray.chart_ref.clone(),
            });
        }
        let specs = items
            .iter()
            .filter(|i| i.source == Source::Synthetic)
            .map(|i| self.read_spec(&i.chart_ref))
            .collect::<Result<_, _>>()?;
        Ok(Dataset { manifest, items, specs })
    }
}
