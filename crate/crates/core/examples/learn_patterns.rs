//! Inversion and composition on held-out triples.
//!
//! Composition uses sparse chains and a tight positive limit; the dense
//! defaults suit inversion.
//!
//! `cargo run --release --example learn_patterns`

use mde::data::FilterIndex;
use mde::eval::{evaluate, ReportSide, Setting};
use mde::synthetic::{generate_pattern_kg, Pattern, PatternSpec};
use mde::training::{TrainConfig, TrainData, Trainer};

fn run(spec: PatternSpec, config: TrainConfig) -> mde::Result<()> {
    let ds = generate_pattern_kg(&spec)?;
    let mut trainer = Trainer::from_data(config, &TrainData::new(ds.vocab.clone(), ds.train.clone()))?;
    for _ in 0..trainer.config().epochs {
        trainer.run_epoch()?;
    }
    let filter = FilterIndex::from_sets([&ds.train, &ds.holdout]);
    let report = evaluate(&ds.holdout, trainer.embeddings(), trainer.score_config(), Some(&filter), &[Setting::Filtered])?;
    let r = report.get(Setting::Filtered, ReportSide::Both).unwrap();
    println!(
        "{:<12} train {:>5} holdout {:>4}  mrr {:.3}  hits@10 {:.3}",
        spec.pattern.name(), ds.train.len(), ds.holdout.len(), r.mrr, r.hits10
    );
    Ok(())
}

fn main() -> mde::Result<()> {
    let base = TrainConfig { dim: 10, p: 2, epochs: 500, seed: 1, ..TrainConfig::default() };
    run(PatternSpec::new(Pattern::Inversion, 200, 2).density(0.0558).seed(1), base.clone())?;
    run(
        PatternSpec::new(Pattern::Composition, 1000, 3).density(0.0005).seed(1),
        TrainConfig { dim: 50, gamma1: 0.0, gamma2: 8.0, ..base },
    )
}
