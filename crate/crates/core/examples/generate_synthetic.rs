//! Generates a small dataset for each relation pattern and prints its shape.
//!
//! `cargo run --example generate_synthetic -- [output_dir]`

use mde::synthetic::{generate_pattern_kg, Pattern, PatternSpec};

fn main() -> mde::Result<()> {
    let out = std::env::args().nth(1);
    for pattern in [Pattern::Symmetry, Pattern::Antisymmetry, Pattern::Inversion, Pattern::Composition] {
        let spec = PatternSpec::new(pattern, 50, pattern.group_size()).density(0.05).seed(1);
        let ds = generate_pattern_kg(&spec)?;
        println!(
            "{:<13} train {:>4}  holdout {:>3}  negatives {:>3}",
            pattern.name(),
            ds.train.len(),
            ds.holdout.len(),
            ds.negatives.len()
        );
        if let Some(dir) = &out {
            ds.write_to(&std::path::Path::new(dir).join(pattern.name()))?;
        }
    }
    Ok(())
}
