//! The element-wise term fits two reflexive facts with distinct entities,
//! where translation must use a zero relation vector.
//!
//! `cargo run --example reflexive_term4`

use mde::data::Triple;
use mde::model::{score_mde, EmbeddingSet, Norm, ParamKind, ScoreConfig, Term};

fn main() -> mde::Result<()> {
    let (a, b) = (0, 1);
    let mut emb = EmbeddingSet::zeros(2, 1, 2, true)?;
    emb.vector_mut(Term::Multiplicative, ParamKind::Entity, a).copy_from_slice(&[1.0, 0.0]);
    emb.vector_mut(Term::Multiplicative, ParamKind::Entity, b).copy_from_slice(&[0.0, 1.0]);
    emb.vector_mut(Term::Multiplicative, ParamKind::Relation, 0).copy_from_slice(&[1.0, 1.0]);
    let config = ScoreConfig::new([0.0, 0.0, 0.0, 1.0], 0.0, Norm::L1, true)?;
    for (h, t) in [(a, a), (b, b), (a, b), (b, a)] {
        let s = score_mde(&Triple::new(h, 0, t), &emb, &config);
        println!("r({}, {}) = {s}", ["a", "b"][h], ["a", "b"][t]);
    }
    Ok(())
}
