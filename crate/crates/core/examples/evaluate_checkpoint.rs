//! Trains briefly, saves a checkpoint, reloads it and reports raw and
//! filtered ranking metrics.
//!
//! `cargo run --example evaluate_checkpoint`

use mde::checkpoint::{inspect, Checkpoint};
use mde::data::FilterIndex;
use mde::eval::{evaluate, Setting};
use mde::synthetic::{generate_pattern_kg, Pattern, PatternSpec};
use mde::training::{TrainConfig, TrainData, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_pattern_kg(&PatternSpec::new(Pattern::Inversion, 60, 2).density(0.1).seed(2))?;
    let config = TrainConfig { dim: 16, p: 2, epochs: 50, ..TrainConfig::default() };
    let mut trainer = Trainer::from_data(config, &TrainData::new(ds.vocab.clone(), ds.train.clone()))?;
    for _ in 0..trainer.config().epochs {
        trainer.run_epoch()?;
    }

    let dir = std::env::temp_dir().join(format!("mde-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    trainer.checkpoint(Some(&ds.vocab)).save(&path)?;
    let header = inspect(&path)?;
    println!("saved {} ({} entities, {} relations, dim {})", path.display(), header.num_entities, header.num_relations, header.dim);

    let ckpt = Checkpoint::load(&path)?;
    let filter = FilterIndex::from_sets([&ds.train, &ds.holdout]);
    let report = evaluate(&ds.holdout, &ckpt.embeddings, &ckpt.config, Some(&filter), &[Setting::Raw, Setting::Filtered])?;
    print!("{}", report.to_text());
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
