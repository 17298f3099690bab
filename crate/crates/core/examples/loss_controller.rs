//! Walks the limit controller through a loss sequence and prints the limits.
//!
//! `cargo run --example loss_controller`

use mde::loss::LossState;

fn main() -> mde::Result<()> {
    let mut state = LossState::builder().gamma1(2.0).gamma2(2.0).xi(0.1).threshold(0.05).build()?;
    let losses = [(0.4, 0.3), (0.0, 0.3), (0.0, 0.3), (0.0, 0.02), (0.0, 0.0), (0.2, 0.0), (0.1, 0.1)];
    println!("{:>6} {:>6}  {:>6} {:>6}  {:>6} {:>6}", "pos", "neg", "δ", "δ′", "L⁺", "L⁻");
    for (pos, neg) in losses {
        state.update(pos, neg);
        println!(
            "{pos:>6.2} {neg:>6.2}  {:>6.2} {:>6.2}  {:>6.2} {:>6.2}",
            state.delta(),
            state.delta_prime(),
            state.positive_limit(),
            state.negative_limit()
        );
    }
    Ok(())
}
