//! Full WN18RR run (multi-hour). Point it at a directory holding the
//! published train.txt, valid.txt and test.txt.
//!
//! `cargo run --release --example wn18rr_reproduction -- path/to/WN18RR [epochs]`
//!
//! Reference filtered results: MRR 0.452, hits@10 0.534.

use std::path::PathBuf;

use mde::data::FilterIndex;
use mde::eval::{evaluate, Setting};
use mde::training::{TrainConfig, TrainData, Trainer};

fn main() -> mde::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next().map(PathBuf::from) else {
        eprintln!("usage: wn18rr_reproduction <dataset dir> [epochs]");
        std::process::exit(1);
    };
    let epochs = args.next().and_then(|e| e.parse().ok()).unwrap_or(1000);
    let data = TrainData::load(&dir.join("train.txt"), Some(&dir.join("valid.txt")), Some(&dir.join("test.txt")))?;
    println!("{} entities, {} training triples", data.vocab.num_entities(), data.train.len());
    let config = TrainConfig {
        dim: 50,
        gamma1: 2.0,
        gamma2: 2.0,
        beta1: 5.0,
        beta2: 1.0,
        epochs,
        threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::from_data(config, &data)?;
    for _ in 0..epochs {
        let r = trainer.run_epoch()?;
        if r.epoch % 50 == 0 {
            println!("epoch {} loss {:.3}", r.epoch, r.total);
        }
    }
    let filter = FilterIndex::build(&data.train, &data.valid, &data.test);
    let report = evaluate(&data.test, trainer.embeddings(), trainer.score_config(), Some(&filter), &[Setting::Filtered])?;
    print!("{}", report.to_text());
    Ok(())
}
