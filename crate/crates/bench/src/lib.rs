//! Shared fixtures for the benchmarks.

use logoforge_core::corpus::{generate_synthetic_corpus, LogoRecord, SynthConfig, Vocabulary};
use logoforge_core::model::LayoutModel;
use logoforge_core::training::TrainConfig;

/// Synthetic records with exactly `n` glyph units each.
pub fn records(count: usize, n: usize) -> Vec<LogoRecord> {
    let cfg = SynthConfig {
        records: count,
        min_units: n,
        max_units: n,
        ..Default::default()
    };
    generate_synthetic_corpus(&cfg, 11).expect("synthetic corpus")
}

/// Untrained model at the toy size.
pub fn toy_model(records: &[LogoRecord]) -> LayoutModel {
    LayoutModel::new(TrainConfig::toy().model, Vocabulary::from_records(records), None, 0).expect("toy model")
}
