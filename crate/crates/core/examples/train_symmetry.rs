//! Symmetry on held-out reverses: the full multi-term model against the
//! translation-only model.
//!
//! `cargo run --release --example train_symmetry`

use mde::data::FilterIndex;
use mde::eval::{evaluate, ReportSide, Setting};
use mde::synthetic::{generate_pattern_kg, Pattern, PatternDataset, PatternSpec};
use mde::training::{TrainConfig, TrainData, Trainer};

fn hits10(ds: &PatternDataset, config: TrainConfig) -> mde::Result<f64> {
    let mut trainer = Trainer::from_data(config, &TrainData::new(ds.vocab.clone(), ds.train.clone()))?;
    for _ in 0..trainer.config().epochs {
        trainer.run_epoch()?;
    }
    let filter = FilterIndex::from_sets([&ds.train, &ds.holdout]);
    let report = evaluate(&ds.holdout, trainer.embeddings(), trainer.score_config(), Some(&filter), &[Setting::Filtered])?;
    Ok(report.get(Setting::Filtered, ReportSide::Both).unwrap().hits10)
}

fn main() -> mde::Result<()> {
    let spec = PatternSpec::new(Pattern::Symmetry, 200, 1).density(0.0558).seed(1);
    let ds = generate_pattern_kg(&spec)?;
    let base = TrainConfig { dim: 10, p: 2, epochs: 500, seed: 1, ..TrainConfig::default() };
    let transe = TrainConfig { weights: [1.0, 0.0, 0.0, 0.0], psi: 0.0, ..base.clone() };
    println!("train {} / holdout {}", ds.train.len(), ds.holdout.len());
    println!("multi-term  hits@10 {:.3}", hits10(&ds, base)?);
    println!("translation hits@10 {:.3}", hits10(&ds, transe)?);
    Ok(())
}
