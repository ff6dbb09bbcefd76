//! Subcommand implementations. Each one resolves its configuration, does its
//! work, then records a run manifest beside its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chartforge_core::canonical;
use chartforge_core::chart_model::ChartSpec;
use chartforge_core::curation::{
    boundary_filter, distill_cot, run_rounds, store_images, CotRejection, DistillOptions, DistillStats, InferenceLog,
    LeakMode, ResumeCursor, RoundPlanEntry, RunOptions,
};
use chartforge_core::gen_client::{Client, ClientConfig, MockScript};
use chartforge_core::qa_engine::{build_dataset, import_real_file, BuildConfig, DatasetStore, QaItem};
use chartforge_core::renderer::render_on_canvas;
use chartforge_core::response_eval::{evaluate_run, parse_response};
use chartforge_core::reward_engine::{total_reward, GroupRewards, RewardBreakdown};
use chartforge_core::topics::TopicCatalog;
use clap::Parser;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{parse_count_table, parse_counts, parse_plan, PipelineConfig};
use crate::run_manifest::{RunManifest, FILE_NAME};
use crate::{
    AdvantagesArgs, BoundaryArgs, Cli, ClientArgs, Command, CurateCommand, CurateRunArgs, DistillArgs, EvaluateArgs,
    GenerateArgs, ImportRealArgs, InferArgs, Partial, RenderArgs, ReplayArgs, RewardArgs, TransportFailed,
};

/// Files and folders `generate` owns inside its output directory.
const GENERATE_ARTIFACTS: [&str; 6] = [
    "charts",
    "images",
    "items.jsonl",
    "manifest.json",
    FILE_NAME,
    "real_rejections.json",
];
const DEFAULT_CONCURRENCY: usize = 4;

/// Shared state for one invocation.
struct Ctx<'a> {
    cli_config: Option<&'a Path>,
    seed: Option<u64>,
    jobs: Option<usize>,
    argv: &'a [String],
    /// Recorded config from a run manifest; replaces file and environment.
    replayed: Option<PipelineConfig>,
}

impl Ctx<'_> {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.replayed {
            Some(c) => c.clone(),
            None => PipelineConfig::resolve(self.cli_config)?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        Ok(cfg)
    }

    fn replaying(&self) -> bool {
        self.replayed.is_some()
    }

    /// Hashes `outputs` and writes the manifest into `base`.
    fn finish(&self, command: &str, cfg: &PipelineConfig, base: &Path, outputs: &[PathBuf]) -> Result<RunManifest> {
        let mut m = RunManifest::new(command, self.argv, cfg);
        m.record_outputs(base, outputs)?;
        m.write(&base.join(FILE_NAME))?;
        Ok(m)
    }
}

pub fn run(cli: Cli, argv: &[String], replayed: Option<PipelineConfig>) -> Result<()> {
    let ctx = Ctx {
        cli_config: cli.config.as_deref(),
        seed: cli.seed,
        jobs: cli.jobs,
        argv,
        replayed,
    };
    match cli.command {
        Command::Generate(a) => generate(&ctx, a).map(drop),
        Command::Render(a) => render(&ctx, a).map(drop),
        Command::ImportReal(a) => import_real(&ctx, a).map(drop),
        Command::Infer(a) => infer(&ctx, a).map(drop),
        Command::Evaluate(a) => evaluate(&ctx, a).map(drop),
        Command::Reward(a) => reward(&ctx, a).map(drop),
        Command::Advantages(a) => advantages(&ctx, a).map(drop),
        Command::Curate(CurateCommand::Run(a)) => curate_run(&ctx, a).map(drop),
        Command::Curate(CurateCommand::Boundary(a)) => curate_boundary(&ctx, a).map(drop),
        Command::Distill(a) => distill(&ctx, a).map(drop),
        Command::Replay(a) => {
            if ctx.replaying() {
                bail!("a run manifest cannot replay another replay");
            }
            replay(a)
        }
    }
}

fn setup_threads(cfg: &PipelineConfig) {
    if cfg.jobs > 0 {
        // a second call (replay) finds the pool already built; that is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    }
}

fn concurrency(cfg: &PipelineConfig) -> usize {
    if cfg.jobs > 0 {
        cfg.jobs
    } else {
        DEFAULT_CONCURRENCY
    }
}

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn create_parent(path: &Path) -> Result<PathBuf> {
    let dir = parent_of(path);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    canonical::from_jsonl(&text).map_err(|(line, e)| anyhow::anyhow!("{}:{}: {e}", path.display(), line + 1))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &canonical::to_string_pretty(value)?)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_text(path, &canonical::to_jsonl(rows)?)
}

/// Script-backed client when `--mock-script` is given, otherwise the
/// configured HTTP endpoint.
fn make_client(cfg: &ClientConfig, args: &ClientArgs) -> Result<Client> {
    let client = match &args.mock_script {
        Some(p) => MockScript::load(p).and_then(|s| Client::mock(cfg.clone(), s)),
        None => Client::openai(cfg.clone()),
    };
    // configuration problems are input errors, not transport errors
    client.map_err(|e| anyhow::anyhow!("client setup: {e}"))
}

fn read_items(dataset: &Path) -> Result<Vec<QaItem>> {
    DatasetStore::new(dataset)
        .read_items()
        .with_context(|| format!("loading items of {}", dataset.display()))
}

// ---------------------------------------------------------------------------
// generate, render, import-real

fn generate(ctx: &Ctx, a: GenerateArgs) -> Result<RunManifest> {
    let mut cfg = ctx.config()?;
    if let Some(c) = &a.count {
        cfg.counts = Some(parse_counts(c)?);
    }
    if let Some(h) = a.hard_fraction {
        cfg.hard_fraction = h;
    }
    if let Some(t) = &a.topics {
        cfg.topics = t
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
    }
    cfg.validate()?;
    setup_threads(&cfg);

    prepare_out_dir(&a.out, a.force || ctx.replaying())?;
    let store = DatasetStore::new(&a.out);
    let mut outputs: Vec<PathBuf> = ["charts", "images", "items.jsonl", "manifest.json"]
        .iter()
        .map(|p| a.out.join(p))
        .collect();

    let real_pool = match &a.real_imports {
        Some(path) => {
            let outcome = import_real_file(path, &store.images_dir())?;
            let rej = a.out.join("real_rejections.json");
            write_json(&rej, &outcome.rejections)?;
            outputs.push(rej);
            if !outcome.rejections.is_empty() {
                eprintln!(
                    "{} real records rejected; see real_rejections.json",
                    outcome.rejections.len()
                );
            }
            outcome.items
        }
        None => Vec::new(),
    };

    let counts = match &cfg.counts {
        Some(t) => parse_count_table(t)?,
        None => BuildConfig::benchmark(cfg.seed, a.real_imports.is_some()).counts,
    };
    let build = BuildConfig {
        seed: cfg.seed,
        counts,
        hard_fraction: cfg.hard_fraction,
    };
    let topics = if cfg.topics.is_empty() {
        TopicCatalog::default()
    } else {
        TopicCatalog::from_names(&cfg.topics)
    };
    let dataset = build_dataset(&build, &topics, &real_pool)?;
    store.write(&dataset)?;
    println!(
        "{}: {} items ({} synthetic, {} real)",
        dataset.manifest.dataset_id,
        dataset.manifest.total(),
        dataset
            .manifest
            .source_total(chartforge_core::qa_engine::Source::Synthetic),
        dataset.manifest.source_total(chartforge_core::qa_engine::Source::Real),
    );
    ctx.finish("generate", &cfg, &a.out, &outputs)
}

/// Refuses to mix runs: an occupied directory needs `force`, which removes
/// only what `generate` itself writes.
fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let occupied = fs::read_dir(out)
            .with_context(|| format!("listing {}", out.display()))?
            .next()
            .is_some();
        if occupied && !force {
            bail!(
                "{} is not empty; pass --force to replace an earlier dataset",
                out.display()
            );
        }
        for name in GENERATE_ARTIFACTS {
            let p = out.join(name);
            if p.is_dir() {
                fs::remove_dir_all(&p).with_context(|| format!("removing {}", p.display()))?;
            } else if p.exists() {
                fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn render_one(spec: &ChartSpec, svg_path: &Path, width: u32, height: u32) -> Result<Vec<PathBuf>> {
    let rendered = render_on_canvas(spec, width, height).with_context(|| format!("rendering {}", spec.id))?;
    let meta_path = svg_path.with_extension("meta.json");
    write_text(svg_path, &rendered.svg_text)?;
    write_json(&meta_path, &rendered.meta(spec))?;
    Ok(vec![svg_path.to_path_buf(), meta_path])
}

fn render(ctx: &Ctx, a: RenderArgs) -> Result<RunManifest> {
    let cfg = ctx.config()?;
    setup_threads(&cfg);
    if let Some(spec_path) = &a.spec {
        let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
        let spec: ChartSpec = canonical::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
        let base = create_parent(&a.out)?;
        let outputs = render_one(&spec, &a.out, a.width, a.height)?;
        return ctx.finish("render", &cfg, &base, &outputs);
    }
    let dataset = a.dataset.as_deref().expect("clap requires --spec or --dataset");
    let ds = DatasetStore::new(dataset).open()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    use rayon::prelude::*;
    let outputs: Vec<PathBuf> = ds
        .specs
        .par_iter()
        .map(|s| render_one(s, &a.out.join(format!("{}.svg", s.id)), a.width, a.height))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    println!("rendered {} charts into {}", ds.specs.len(), a.out.display());
    ctx.finish("render", &cfg, &a.out, &outputs)
}

fn import_real(ctx: &Ctx, a: ImportRealArgs) -> Result<RunManifest> {
    let cfg = ctx.config()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let outcome = import_real_file(&a.imports, &a.out.join("images"))?;
    let items = a.out.join("real_items.jsonl");
    let rejections = a.out.join("real_rejections.json");
    write_jsonl(&items, &outcome.items)?;
    write_json(&rejections, &outcome.rejections)?;
    println!(
        "{} items imported, {} records rejected",
        outcome.items.len(),
        outcome.rejections.len()
    );
    ctx.finish("import-real", &cfg, &a.out, &[a.out.join("images"), items, rejections])
}

// ---------------------------------------------------------------------------
// infer, evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResponseRow {
    item_id: String,
    raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn infer(ctx: &Ctx, a: InferArgs) -> Result<RunManifest> {
    let mut cfg = ctx.config()?;
    if let Some(m) = &a.mode {
        cfg.eval_mode = m.parse()?;
    }
    cfg.validate()?;
    let items = read_items(&a.dataset)?;
    let client = make_client(&cfg.candidate, &a.client)?;
    let plan = [RoundPlanEntry {
        prompt_mode: cfg.eval_mode,
        temperature: a.temperature,
    }];
    let options = RunOptions {
        concurrency: concurrency(&cfg),
        tau: cfg.tau,
        start_round: 0,
    };
    let loader = store_images(&a.dataset);
    let outcome = run_rounds(&items, &loader, &client, &plan, options, InferenceLog::default())?;
    if let Some(c) = outcome.cursor {
        return Err(TransportFailed(c.error).into());
    }
    let rows: Vec<ResponseRow> = outcome
        .log
        .rows
        .iter()
        .map(|(id, results)| ResponseRow {
            item_id: id.clone(),
            raw_text: results[0].raw_text.clone(),
            error: results[0].error.clone(),
        })
        .collect();
    let base = create_parent(&a.out)?;
    write_jsonl(&a.out, &rows)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} responses written ({failed} request errors)", rows.len());
    ctx.finish("infer", &cfg, &base, &[a.out])
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<RunManifest> {
    let mut cfg = ctx.config()?;
    if let Some(t) = a.tau {
        cfg.tau = t;
    }
    if let Some(m) = &a.mode {
        cfg.eval_mode = m.parse()?;
    }
    cfg.validate()?;
    let items = read_items(&a.dataset)?;
    let rows: Vec<ResponseRow> = read_jsonl(&a.responses)?;
    let responses: Vec<_> = rows
        .into_iter()
        .map(|r| {
            let parsed = parse_response(&r.raw_text, cfg.eval_mode);
            (r.item_id, parsed)
        })
        .collect();
    let report = evaluate_run(&responses, &items, cfg.tau)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let json = a.out.join("report.json");
    let txt = a.out.join("report.txt");
    let table = report.to_text_table();
    write_json(&json, &report)?;
    write_text(&txt, &table)?;
    print!("{table}");
    ctx.finish("evaluate", &cfg, &a.out, &[json, txt])
}

// ---------------------------------------------------------------------------
// reward, advantages

#[derive(Debug, Deserialize)]
struct RewardInput {
    #[serde(default)]
    item_id: Option<String>,
    raw_text: String,
    answer_gt: f64,
}

#[derive(Debug, Serialize)]
struct RewardRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    item_id: Option<String>,
    #[serde(flatten)]
    reward: RewardBreakdown,
}

fn reward(ctx: &Ctx, a: RewardArgs) -> Result<RunManifest> {
    let mut cfg = ctx.config()?;
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    cfg.validate()?;
    let inputs: Vec<RewardInput> = match (&a.input, &a.dataset, &a.responses) {
        (Some(p), _, _) => read_jsonl(p)?,
        (None, Some(d), Some(r)) => {
            let gt: BTreeMap<String, f64> = read_items(d)?.into_iter().map(|i| (i.item_id, i.answer_gt)).collect();
            read_jsonl::<ResponseRow>(r)?
                .into_iter()
                .map(|row| {
                    let answer_gt = *gt
                        .get(&row.item_id)
                        .with_context(|| format!("response for unknown item {}", row.item_id))?;
                    Ok(RewardInput {
                        item_id: Some(row.item_id),
                        raw_text: row.raw_text,
                        answer_gt,
                    })
                })
                .collect::<Result<_>>()?
        }
        _ => bail!("pass --input, or --dataset with --responses"),
    };
    let rows: Vec<RewardRow> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let reward = total_reward(&r.raw_text, r.answer_gt, cfg.epsilon)
                .with_context(|| format!("record {}", r.item_id.clone().unwrap_or_else(|| (i + 1).to_string())))?;
            Ok(RewardRow {
                item_id: r.item_id,
                reward,
            })
        })
        .collect::<Result<_>>()?;
    let base = create_parent(&a.out)?;
    write_jsonl(&a.out, &rows)?;
    let mean = rows.iter().map(|r| r.reward.total).sum::<f64>() / rows.len().max(1) as f64;
    println!("{} rewards written, mean total {mean:.4}", rows.len());
    ctx.finish("reward", &cfg, &base, &[a.out])
}

#[derive(Debug, Deserialize)]
struct AdvantageInput {
    prompt_id: String,
    #[serde(default)]
    reward: Option<f64>,
    #[serde(default)]
    rewards: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct AdvantageRow {
    prompt_id: String,
    #[serde(flatten)]
    group: GroupRewards,
}

fn advantages(ctx: &Ctx, a: AdvantagesArgs) -> Result<RunManifest> {
    let mut cfg = ctx.config()?;
    if let Some(g) = a.std_guard {
        cfg.std_guard = g;
    }
    cfg.validate()?;
    // groups keep first-appearance order
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (line, r) in read_jsonl::<AdvantageInput>(&a.input)?.into_iter().enumerate() {
        let values = match (r.reward, r.rewards) {
            (Some(v), None) => vec![v],
            (None, Some(vs)) => vs,
            _ => bail!("line {}: give exactly one of reward or rewards", line + 1),
        };
        match groups.iter_mut().find(|(id, _)| *id == r.prompt_id) {
            Some((_, g)) => g.extend(values),
            None => groups.push((r.prompt_id, values)),
        }
    }
    let rows: Vec<AdvantageRow> = groups
        .into_iter()
        .map(|(prompt_id, rewards)| {
            let group =
                GroupRewards::from_rewards(rewards, cfg.std_guard).with_context(|| format!("prompt {prompt_id}"))?;
            Ok(AdvantageRow { prompt_id, group })
        })
        .collect::<Result<_>>()?;
    let base = create_parent(&a.out)?;
    write_jsonl(&a.out, &rows)?;
    println!("{} groups written", rows.len());
    ctx.finish("advantages", &cfg, &base, &[a.out])
}

// ---------------------------------------------------------------------------
// curate, distill

fn curate_run(ctx: &Ctx, a: CurateRunArgs) -> Result<RunManifest> {
    let mut cfg = ctx.config()?;
    if let Some(p) = &a.plan {
        cfg.round_plan = parse_plan(p)?;
    }
    cfg.validate()?;
    let items = read_items(&a.dataset)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let log_path = a.out.join("inference_log.jsonl");
    let cursor_path = a.out.join("cursor.json");
    let boundary_path = a.out.join("boundary.json");

    let (plan, start_round, existing) = if a.resume {
        let text =
            fs::read_to_string(&cursor_path).with_context(|| format!("--resume needs {}", cursor_path.display()))?;
        let cursor: ResumeCursor = canonical::from_str(&text)?;
        let log = if log_path.exists() {
            InferenceLog::read(&log_path)?
        } else {
            InferenceLog::default()
        };
        (cursor.plan, cursor.next_round, log)
    } else {
        (cfg.round_plan.clone(), 0, InferenceLog::default())
    };
    let client = make_client(&cfg.candidate, &a.client)?;
    let options = RunOptions {
        concurrency: concurrency(&cfg),
        tau: cfg.tau,
        start_round,
    };
    let loader = store_images(&a.dataset);
    let outcome = run_rounds(&items, &loader, &client, &plan, options, existing)?;
    outcome.log.write(&log_path)?;

    if let Some(cursor) = outcome.cursor {
        write_json(&cursor_path, &cursor)?;
        if boundary_path.exists() {
            fs::remove_file(&boundary_path)?;
        }
        ctx.finish("curate run", &cfg, &a.out, &[log_path, cursor_path])?;
        return Err(
            anyhow::Error::new(TransportFailed(cursor.error.clone())).context(Partial(format!(
                "stopped before round {} of {}; rerun with --resume",
                cursor.next_round,
                cursor.plan.len()
            ))),
        );
    }
    if cursor_path.exists() {
        fs::remove_file(&cursor_path).with_context(|| format!("removing {}", cursor_path.display()))?;
    }
    let boundary: Vec<String> = boundary_filter(&outcome.log).into_iter().collect();
    write_json(&boundary_path, &boundary)?;
    println!(
        "{} items over {} rounds; {} on the boundary",
        outcome.log.rows.len(),
        plan.len(),
        boundary.len()
    );
    ctx.finish("curate run", &cfg, &a.out, &[log_path, boundary_path])
}

fn curate_boundary(ctx: &Ctx, a: BoundaryArgs) -> Result<Option<RunManifest>> {
    let cfg = ctx.config()?;
    let log = InferenceLog::read(&a.log)?;
    let ids: Vec<String> = boundary_filter(&log).into_iter().collect();
    for id in &ids {
        println!("{id}");
    }
    match &a.out {
        Some(out) => {
            let base = create_parent(out)?;
            write_json(out, &ids)?;
            Ok(Some(ctx.finish(
                "curate boundary",
                &cfg,
                &base,
                std::slice::from_ref(out),
            )?))
        }
        None => Ok(None),
    }
}

#[derive(Debug, Serialize)]
struct DistillSummary {
    target: usize,
    shortfall: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    aborted: Option<String>,
    stats: DistillStats,
    /// Percent of validated attempts rejected per reason.
    rejection_rates: BTreeMap<CotRejection, f64>,
}

fn distill(ctx: &Ctx, a: DistillArgs) -> Result<RunManifest> {
    let mut cfg = ctx.config()?;
    if let Some(t) = a.target {
        cfg.distill_target = t;
    }
    if let Some(m) = a.max_attempts {
        cfg.distill_max_attempts = m;
    }
    if a.value_leaks {
        cfg.leak.mode = LeakMode::PhrasesAndValue;
    }
    cfg.validate()?;
    let mut items = read_items(&a.dataset)?;
    if let Some(only) = &a.only {
        let text = fs::read_to_string(only).with_context(|| format!("reading {}", only.display()))?;
        let keep: std::collections::BTreeSet<String> = canonical::from_str(&text)?;
        items.retain(|i| keep.contains(&i.item_id));
    }
    let teacher = make_client(&cfg.teacher, &a.client)?;
    let options = DistillOptions {
        target_count: cfg.distill_target,
        max_attempts_per_item: cfg.distill_max_attempts,
        concurrency: concurrency(&cfg),
        leak: cfg.leak.clone(),
    };
    let loader = store_images(&a.dataset);
    let report = distill_cot(&items, &loader, &teacher, &options);

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let samples_path = a.out.join("cot_samples.jsonl");
    let report_path = a.out.join("distill_report.json");
    write_jsonl(&samples_path, &report.samples)?;
    let rates = [
        CotRejection::MissingTags,
        CotRejection::WrongAnswer,
        CotRejection::Leakage,
    ]
    .into_iter()
    .map(|r| (r, report.stats.rejection_rate(r)))
    .collect();
    write_json(
        &report_path,
        &DistillSummary {
            target: report.target,
            shortfall: report.shortfall,
            aborted: report.aborted.clone(),
            stats: report.stats.clone(),
            rejection_rates: rates,
        },
    )?;
    let manifest = ctx.finish("distill", &cfg, &a.out, &[samples_path, report_path])?;
    let s = &report.stats;
    println!(
        "{} accepted of {} attempts (missing tags {}, wrong answer {}, leakage {}, errors {})",
        s.accepted, s.attempts, s.missing_tags, s.wrong_answer, s.leakage, s.errors
    );
    if let Some(e) = report.aborted {
        return Err(TransportFailed(e).into());
    }
    if report.shortfall > 0 {
        return Err(Partial(format!(
            "{} samples short of the target {}",
            report.shortfall, report.target
        ))
        .into());
    }
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// replay

/// Reruns the recorded command with the recorded configuration and checks
/// that every recorded output hashes the same.
fn replay(a: ReplayArgs) -> Result<()> {
    let old = RunManifest::read(&a.manifest)?;
    let cli = Cli::try_parse_from(std::iter::once("chartforge".to_string()).chain(old.argv.iter().cloned()))
        .context("recorded arguments no longer parse")?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("a run manifest cannot replay another replay");
    }
    run(cli, &old.argv, Some(old.config.clone()))?;
    let new = RunManifest::read(&a.manifest).context("the replayed command wrote its manifest elsewhere")?;
    let changed: Vec<&String> = old
        .outputs
        .iter()
        .filter(|(k, v)| new.outputs.get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    if !changed.is_empty() || new.outputs.len() != old.outputs.len() {
        bail!(
            "replay diverged: {} of {} outputs differ (first: {:?})",
            changed.len(),
            old.outputs.len(),
            changed.first()
        );
    }
    println!("replay reproduced all {} outputs", new.outputs.len());
    Ok(())
}
