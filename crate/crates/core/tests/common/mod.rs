//! Fixtures shared by the integration tests.

#![allow(dead_code)]

pub mod geometry;

use chartforge_core::chart_model::{sample_spec, ChartSpec, ChartType, Difficulty};
use chartforge_core::rng::SeededRng;
use chartforge_core::topics::TopicCatalog;

/// The `i`-th spec of a reproducible stream cycling through every chart type
/// and both difficulties.
pub fn spec_stream(n: usize, seed: u64) -> Vec<ChartSpec> {
    let topics = TopicCatalog::default();
    let names: Vec<String> = topics.names().into_iter().map(str::to_string).collect();
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|i| {
            let t = ChartType::ALL[i % ChartType::ALL.len()];
            let d = if i % 2 == 0 { Difficulty::Easy } else { Difficulty::Hard };
            let topic = rng.choose(&names).clone();
            sample_spec(&topics, rng.next_u64(), t, &topic, d).expect("sampler accepts default topics")
        })
        .collect()
}
