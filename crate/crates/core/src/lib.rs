//! Benchmark generation, relaxed-accuracy evaluation, GRPO reward shaping and
//! data curation for numerical estimation on non-annotated charts.

pub mod answer_parse;
pub mod canonical;
pub mod chart_model;
pub mod curation;
pub mod gen_client;
pub mod prompts;
pub mod qa_engine;
pub mod renderer;
pub mod response_eval;
pub mod reward_engine;
pub mod rng;
pub mod topics;
