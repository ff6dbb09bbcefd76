//! Pipeline configuration: TOML file, `CHARTFORGE_SEED`, then flags.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chartforge_core::chart_model::ChartType;
use chartforge_core::curation::{default_round_plan, LeakConfig, RoundPlanEntry, DEFAULT_SFT_TARGET};
use chartforge_core::gen_client::ClientConfig;
use chartforge_core::qa_engine::{Counts, Source};
use chartforge_core::response_eval::{PromptMode, DEFAULT_TAU};
use chartforge_core::reward_engine::{DEFAULT_EPSILON, DEFAULT_STD_GUARD};
use chartforge_core::rng::DEFAULT_SEED;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "CHARTFORGE_SEED";

/// Item counts as written in a config file: `{source: {type: n}}`.
pub type CountTable = BTreeMap<String, BTreeMap<String, usize>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub tau: f64,
    pub epsilon: f64,
    pub std_guard: f64,
    pub hard_fraction: f64,
    /// Empty means the built-in topic list.
    pub topics: Vec<String>,
    /// Unset means benchmark-scale counts.
    pub counts: Option<CountTable>,
    /// Worker threads; 0 lets the runtime decide.
    pub jobs: usize,
    pub eval_mode: PromptMode,
    pub round_plan: Vec<RoundPlanEntry>,
    pub distill_target: usize,
    pub distill_max_attempts: usize,
    pub leak: LeakConfig,
    /// Model under evaluation or curation.
    pub candidate: ClientConfig,
    /// Model that writes CoT solutions.
    pub teacher: ClientConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            tau: DEFAULT_TAU,
            epsilon: DEFAULT_EPSILON,
            std_guard: DEFAULT_STD_GUARD,
            hard_fraction: 0.5,
            topics: Vec::new(),
            counts: None,
            jobs: 0,
            eval_mode: PromptMode::OptionalCot,
            round_plan: default_round_plan(),
            distill_target: DEFAULT_SFT_TARGET,
            distill_max_attempts: 2,
            leak: LeakConfig::default(),
            candidate: ClientConfig {
                model_name: "Qwen2.5-VL-7B-Instruct".to_string(),
                ..ClientConfig::default()
            },
            teacher: ClientConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// File (or defaults), then the seed environment override.
    pub fn resolve(file: Option<&Path>) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Ok(raw) = std::env::var(SEED_ENV) {
            cfg.seed = raw
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={raw:?} is not an unsigned integer"))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            bail!("tau must be positive, got {}", self.tau);
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            bail!("epsilon must be positive, got {}", self.epsilon);
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            bail!("hard_fraction must lie in [0, 1], got {}", self.hard_fraction);
        }
        if self.round_plan.is_empty() {
            bail!("round_plan is empty");
        }
        if let Some(c) = &self.counts {
            parse_count_table(c)?;
        }
        Ok(())
    }
}

pub fn parse_count_table(table: &CountTable) -> Result<Counts> {
    let mut out = Counts::new();
    for (source, types) in table {
        let source = parse_source(source)?;
        for (t, &n) in types {
            let t: ChartType = t.parse()?;
            out.entry(source).or_default().insert(t, n);
        }
    }
    Ok(out)
}

fn parse_source(s: &str) -> Result<Source> {
    match s {
        "synthetic" => Ok(Source::Synthetic),
        "real" => Ok(Source::Real),
        other => bail!("unknown source {other:?}; expected synthetic or real"),
    }
}

/// Parses `bar=3,radar=2,real:bar=2`. A bare type means synthetic.
pub fn parse_counts(spec: &str) -> Result<CountTable> {
    let mut out = CountTable::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, n) = part
            .split_once('=')
            .with_context(|| format!("count {part:?} is not of the form type=n"))?;
        let n: usize = n
            .trim()
            .parse()
            .with_context(|| format!("count {part:?} has a bad number"))?;
        let (source, t) = match key.split_once(':') {
            Some((s, t)) => (s.trim(), t.trim()),
            None => ("synthetic", key.trim()),
        };
        parse_source(source)?;
        t.parse::<ChartType>()?;
        *out.entry(source.to_string())
            .or_default()
            .entry(t.to_string())
            .or_default() += n;
    }
    if out.is_empty() {
        bail!("empty count specification");
    }
    Ok(out)
}

/// `direct:0.0,forced_cot:0.9`.
pub fn parse_plan(spec: &str) -> Result<Vec<RoundPlanEntry>> {
    spec.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|part| {
            let (mode, t) = part
                .split_once(':')
                .with_context(|| format!("plan entry {part:?} is not of the form mode:temperature"))?;
            Ok(RoundPlanEntry {
                prompt_mode: mode.trim().parse()?,
                temperature: t
                    .trim()
                    .parse()
                    .with_context(|| format!("bad temperature in {part:?}"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_flags() {
        let c = parse_counts("bar=3, real:bar=2,radar=1,bar=1").unwrap();
        assert_eq!(c["synthetic"]["bar"], 4);
        assert_eq!(c["real"]["bar"], 2);
        let counts = parse_count_table(&c).unwrap();
        assert_eq!(counts[&Source::Synthetic][&ChartType::Radar], 1);
        assert!(parse_counts("pie=2").is_err());
        assert!(parse_counts("bar").is_err());
        assert!(parse_counts("web:bar=1").is_err());
    }

    #[test]
    fn plan_flags() {
        let p = parse_plan("direct:0.0,forced_cot:0.9").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].prompt_mode, PromptMode::ForcedCot);
        assert!(parse_plan("sideways:1").is_err());
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        let partial: PipelineConfig = toml::from_str("seed = 7\n[counts.synthetic]\nbar = 2\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.tau, DEFAULT_TAU);
        assert!(toml::from_str::<PipelineConfig>("sede = 7").is_err());
    }
}
