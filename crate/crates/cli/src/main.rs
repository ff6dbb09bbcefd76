//! `chartforge`: benchmark generation, evaluation, rewards and curation.
//!
//! Exit codes: 0 success, 1 validation or input error, 2 transport error,
//! 3 partial completion.

mod commands;
mod config;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use chartforge_core::gen_client::ClientError;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "chartforge", version, about = "Non-annotated chart benchmark toolkit")]
pub struct Cli {
    /// TOML config file; flags override it, `CHARTFORGE_SEED` sits between.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random decision.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset directory: specs, SVGs, items.jsonl, manifest.json.
    Generate(GenerateArgs),
    /// Render one spec file, or every spec of a dataset.
    Render(RenderArgs),
    /// Import vetted real charts from a real_imports.jsonl file.
    ImportReal(ImportRealArgs),
    /// Query a model once per item and write responses.jsonl.
    Infer(InferArgs),
    /// Score responses with relaxed accuracy; writes report.json and report.txt.
    Evaluate(EvaluateArgs),
    /// Compute format and accuracy rewards per response.
    Reward(RewardArgs),
    /// Group-normalised advantages per prompt.
    Advantages(AdvantagesArgs),
    /// Multi-round inference logging and boundary selection.
    #[command(subcommand)]
    Curate(CurateCommand),
    /// Distill validated CoT samples from a teacher model.
    Distill(DistillArgs),
    /// Rerun a command from its run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Per-type counts, e.g. `bar=3,radar=2,real:bar=2`. Bare types are synthetic.
    #[arg(long)]
    pub count: Option<String>,
    #[arg(long)]
    pub hard_fraction: Option<f64>,
    /// Comma-separated topic names.
    #[arg(long)]
    pub topics: Option<String>,
    /// real_imports.jsonl with {image, question, answer, chart_type, topic}.
    #[arg(long)]
    pub real_imports: Option<PathBuf>,
    /// Replace earlier output in `--out`.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// A single spec JSON file.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub spec: Option<PathBuf>,
    /// A dataset directory; every spec under charts/ is rendered.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// SVG file for `--spec`, directory for `--dataset`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = chartforge_core::renderer::DEFAULT_WIDTH)]
    pub width: u32,
    #[arg(long, default_value_t = chartforge_core::renderer::DEFAULT_HEIGHT)]
    pub height: u32,
}

#[derive(Debug, Args)]
pub struct ImportRealArgs {
    #[arg(long)]
    pub imports: PathBuf,
    /// Receives images/, real_items.jsonl and real_rejections.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// Answer from a mock script instead of the configured endpoint.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// responses.jsonl to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[command(flatten)]
    pub client: ClientArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// responses.jsonl with {item_id, raw_text}.
    #[arg(long)]
    pub responses: PathBuf,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
    /// direct, optional_cot or forced_cot.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    /// JSONL with {raw_text, answer_gt} and an optional item_id.
    #[arg(long, conflicts_with_all = ["dataset", "responses"], required_unless_present = "responses")]
    pub input: Option<PathBuf>,
    /// Dataset to join `--responses` against.
    #[arg(long, requires = "responses")]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    pub responses: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AdvantagesArgs {
    /// JSONL of {prompt_id, reward} or {prompt_id, rewards: [...]}.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub std_guard: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum CurateCommand {
    /// Run the round plan over a dataset and log correctness.
    Run(CurateRunArgs),
    /// Print the items that are right in some rounds and wrong in others.
    Boundary(BoundaryArgs),
}

#[derive(Debug, Args)]
pub struct CurateRunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Receives inference_log.jsonl, boundary.json and, after a failure, cursor.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Round plan, e.g. `direct:0.0,forced_cot:0.9`.
    #[arg(long)]
    pub plan: Option<String>,
    /// Continue from `out/cursor.json`.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub client: ClientArgs,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Also write the ids as a JSON array.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Receives cot_samples.jsonl and distill_report.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub max_attempts: Option<usize>,
    /// JSON array of item ids to restrict to, e.g. a curate `boundary.json`.
    #[arg(long)]
    pub only: Option<PathBuf>,
    /// Also reject reasoning that states the answer value.
    #[arg(long)]
    pub value_leaks: bool,
    #[command(flatten)]
    pub client: ClientArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A run_manifest.json written by an earlier command.
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Command finished but did not do everything it was asked to.
#[derive(Debug)]
pub struct Partial(pub String);

impl std::fmt::Display for Partial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "partial completion: {}", self.0)
    }
}

impl std::error::Error for Partial {}

/// A model endpoint failed in a way retries could not fix.
#[derive(Debug)]
pub struct TransportFailed(pub String);

impl std::fmt::Display for TransportFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "model endpoint failed: {}", self.0)
    }
}

impl std::error::Error for TransportFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    // downcast_ref sees context layers too, which chain().is() does not
    let transport = err.downcast_ref::<TransportFailed>().is_some()
        || err.chain().any(|e| e.is::<TransportFailed>() || e.is::<ClientError>());
    if err.downcast_ref::<Partial>().is_some() {
        3
    } else if transport {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match commands::run(cli, &argv, None) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
