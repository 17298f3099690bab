//! Generated knowledge graphs exhibiting a single relational pattern.
//!
//! Each generator samples base facts, closes them under the pattern's rule
//! and holds out a fraction of the implied facts:
//!
//! * symmetry: `r(x, y)` is always trained; the reverse `r(y, x)` goes to the
//!   holdout for a `holdout_fraction` of pairs and to train otherwise;
//! * antisymmetry: `r(x, y)` facts are split between train and holdout, and
//!   every reverse `r(y, x)` is recorded in a negative list of facts that
//!   should score worse than the positives;
//! * inversion: relations come in groups `(r1, r2)`; `r2(x, y)` is trained
//!   and the implied `r1(y, x)` is held out or trained;
//! * composition: groups `(r1, r2, r3)`; chains `r2(x, y), r3(y, z)` are
//!   trained and every implied `r1(x, z)` is held out or trained.
//!
//! The number of sampled base pairs (or chains) per relation group is
//! `round(density · n(n−1)/2)`, at least one. Output is fully determined by
//! the [`PatternSpec`].

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{save_triples, SplitRole, Triple, TripleSet, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    Symmetry,
    Antisymmetry,
    Inversion,
    Composition,
}

impl Pattern {
    /// Relations per independent group.
    pub const fn group_size(self) -> usize {
        match self {
            Pattern::Symmetry | Pattern::Antisymmetry => 1,
            Pattern::Inversion => 2,
            Pattern::Composition => 3,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Pattern::Symmetry => "symmetry",
            Pattern::Antisymmetry => "antisymmetry",
            Pattern::Inversion => "inversion",
            Pattern::Composition => "composition",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetry" => Ok(Pattern::Symmetry),
            "antisymmetry" => Ok(Pattern::Antisymmetry),
            "inversion" => Ok(Pattern::Inversion),
            "composition" => Ok(Pattern::Composition),
            _ => Err(Error::Config(format!(
                "unknown pattern {s:?} (expected symmetry, antisymmetry, inversion or composition)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    pub pattern: Pattern,
    pub n_entities: usize,
    pub n_relations: usize,
    pub density: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl PatternSpec {
    pub fn new(pattern: Pattern, n_entities: usize, n_relations: usize) -> Self {
        PatternSpec {
            pattern,
            n_entities,
            n_relations,
            density: 0.05,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }

    pub fn density(mut self, v: f64) -> Self {
        self.density = v;
        self
    }

    pub fn holdout_fraction(mut self, v: f64) -> Self {
        self.holdout_fraction = v;
        self
    }

    pub fn seed(mut self, v: u64) -> Self {
        self.seed = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_entities < 3 {
            return Err(Error::Config(format!("need at least 3 entities, got {}", self.n_entities)));
        }
        let g = self.pattern.group_size();
        if self.n_relations < g {
            return Err(Error::Config(format!(
                "{} needs at least {g} relations, got {}",
                self.pattern, self.n_relations
            )));
        }
        if !self.n_relations.is_multiple_of(g) {
            return Err(Error::Config(format!(
                "{} uses groups of {g} relations; {} is not a multiple",
                self.pattern, self.n_relations
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density must lie in (0, 1], got {}", self.density)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout fraction must lie in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }

    fn pairs_per_group(&self) -> usize {
        let n = self.n_entities;
        let all = n * (n - 1) / 2;
        ((self.density * all as f64).round() as usize).clamp(1, all)
    }
}

/// A generated dataset. `negatives` is only populated for antisymmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternDataset {
    pub spec: PatternSpec,
    pub vocab: Vocabulary,
    pub train: TripleSet,
    pub holdout: TripleSet,
    pub negatives: TripleSet,
}

fn held_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Samples `k` distinct unordered pairs, each randomly oriented.
fn sample_pairs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<(usize, usize)> {
    let all = n * (n - 1) / 2;
    index::sample(rng, all, k)
        .into_iter()
        .map(|i| {
            // Row-major decoding of the strict upper triangle.
            let mut x = 0;
            let mut rem = i;
            while rem >= n - 1 - x {
                rem -= n - 1 - x;
                x += 1;
            }
            let y = x + 1 + rem;
            if rng.gen_bool(0.5) {
                (x, y)
            } else {
                (y, x)
            }
        })
        .collect()
}

/// Samples `k` distinct chains `x → y → z` of three distinct entities.
fn sample_chains(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<(usize, usize, usize)> {
    let mut seen = HashSet::new();
    let mut chains = Vec::with_capacity(k);
    let max_tries = 100 * k + 1000;
    let mut tries = 0;
    while chains.len() < k && tries < max_tries {
        tries += 1;
        let x = rng.gen_range(0..n);
        let y = rng.gen_range(0..n);
        let z = rng.gen_range(0..n);
        if x == y || y == z || x == z {
            continue;
        }
        if seen.insert((x, y, z)) {
            chains.push((x, y, z));
        }
    }
    chains
}

/// Generates a pattern dataset. Deterministic in `spec`.
pub fn generate_pattern_kg(spec: &PatternSpec) -> Result<PatternDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_entities;
    let groups = spec.n_relations / spec.pattern.group_size();
    let k = spec.pairs_per_group();

    let entity_names: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
    let mut relation_names = Vec::with_capacity(spec.n_relations);
    for g in 0..groups {
        match spec.pattern {
            Pattern::Symmetry => relation_names.push(format!("sym{g}")),
            Pattern::Antisymmetry => relation_names.push(format!("anti{g}")),
            Pattern::Inversion => {
                relation_names.push(format!("inv{g}_r1"));
                relation_names.push(format!("inv{g}_r2"));
            }
            Pattern::Composition => {
                relation_names.push(format!("comp{g}_r1"));
                relation_names.push(format!("comp{g}_r2"));
                relation_names.push(format!("comp{g}_r3"));
            }
        }
    }
    let vocab = Vocabulary::from_names(entity_names, relation_names)?;

    let mut train = Vec::new();
    let mut holdout = Vec::new();
    let mut negatives = Vec::new();
    for g in 0..groups {
        match spec.pattern {
            Pattern::Symmetry => {
                let r = g;
                let pairs = sample_pairs(&mut rng, n, k);
                let held = held_count(pairs.len(), spec.holdout_fraction);
                for (i, &(x, y)) in pairs.iter().enumerate() {
                    train.push(Triple::new(x, r, y));
                    let rev = Triple::new(y, r, x);
                    if i < held {
                        holdout.push(rev);
                    } else {
                        train.push(rev);
                    }
                }
            }
            Pattern::Antisymmetry => {
                let r = g;
                let pairs = sample_pairs(&mut rng, n, k);
                let held = held_count(pairs.len(), spec.holdout_fraction);
                for (i, &(x, y)) in pairs.iter().enumerate() {
                    let fact = Triple::new(x, r, y);
                    if i < held {
                        holdout.push(fact);
                    } else {
                        train.push(fact);
                    }
                    negatives.push(fact.reversed());
                }
            }
            Pattern::Inversion => {
                let (r1, r2) = (2 * g, 2 * g + 1);
                let pairs = sample_pairs(&mut rng, n, k);
                let held = held_count(pairs.len(), spec.holdout_fraction);
                for (i, &(x, y)) in pairs.iter().enumerate() {
                    train.push(Triple::new(x, r2, y));
                    let implied = Triple::new(y, r1, x);
                    if i < held {
                        holdout.push(implied);
                    } else {
                        train.push(implied);
                    }
                }
            }
            Pattern::Composition => {
                let (r1, r2, r3) = (3 * g, 3 * g + 1, 3 * g + 2);
                let chains = sample_chains(&mut rng, n, k);
                let first: BTreeSet<(usize, usize)> = chains.iter().map(|&(x, y, _)| (x, y)).collect();
                let second: BTreeSet<(usize, usize)> = chains.iter().map(|&(_, y, z)| (y, z)).collect();
                train.extend(first.iter().map(|&(x, y)| Triple::new(x, r2, y)));
                train.extend(second.iter().map(|&(y, z)| Triple::new(y, r3, z)));
                // Close under r2 ∘ r3 so no implied fact is missing.
                let mut implied: Vec<Triple> = first
                    .iter()
                    .flat_map(|&(x, y)| {
                        second
                            .range((y, 0)..(y + 1, 0))
                            .map(move |&(_, z)| Triple::new(x, r1, z))
                    })
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                implied.shuffle(&mut rng);
                let held = held_count(implied.len(), spec.holdout_fraction);
                holdout.extend_from_slice(&implied[..held]);
                train.extend_from_slice(&implied[held..]);
            }
        }
    }

    let (train, _) = TripleSet::from_triples(train, SplitRole::Train);
    let train_set: HashSet<Triple> = train.iter().copied().collect();
    // A reversed or implied fact may coincide with a sampled training fact.
    let (holdout, _) = TripleSet::from_triples(
        holdout.into_iter().filter(|t| !train_set.contains(t)),
        SplitRole::Test,
    );
    let (negatives, _) = TripleSet::from_triples(negatives, SplitRole::Test);
    Ok(PatternDataset {
        spec: spec.clone(),
        vocab,
        train,
        holdout,
        negatives,
    })
}

impl PatternDataset {
    /// Human-readable `key: value` manifest describing the dataset.
    pub fn manifest(&self) -> String {
        let s = &self.spec;
        format!(
            "pattern: {}\nentities: {}\nrelations: {}\ndensity: {}\nholdout_fraction: {}\nseed: {}\n\
             train_triples: {}\nholdout_triples: {}\nnegative_triples: {}\n",
            s.pattern,
            s.n_entities,
            s.n_relations,
            s.density,
            s.holdout_fraction,
            s.seed,
            self.train.len(),
            self.holdout.len(),
            self.negatives.len(),
        )
    }

    /// Writes `train.tsv`, `holdout.tsv`, `negatives.tsv` (antisymmetry
    /// only) and `manifest.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("cannot create {}", dir.display()), e))?;
        save_triples(&dir.join("train.tsv"), &self.train, &self.vocab)?;
        save_triples(&dir.join("holdout.tsv"), &self.holdout, &self.vocab)?;
        if self.spec.pattern == Pattern::Antisymmetry {
            save_triples(&dir.join("negatives.tsv"), &self.negatives, &self.vocab)?;
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, self.manifest()).map_err(|e| Error::io(format!("cannot write {}", path.display()), e))
    }
}

/// Parses a manifest written by [`PatternDataset::manifest`] back into the
/// spec that produced it.
pub fn parse_manifest(text: &str) -> Result<PatternSpec> {
    let get = |key: &str| -> Result<String> {
        text.lines()
            .filter_map(|l| l.split_once(':'))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim().to_owned())
            .ok_or_else(|| Error::Data(format!("manifest is missing {key:?}")))
    };
    let num = |v: String, key: &str| -> Result<f64> {
        v.parse().map_err(|_| Error::Data(format!("manifest {key}: bad number {v:?}")))
    };
    let int = |v: String, key: &str| -> Result<u64> {
        v.parse().map_err(|_| Error::Data(format!("manifest {key}: bad integer {v:?}")))
    };
    Ok(PatternSpec {
        pattern: get("pattern")?.parse()?,
        n_entities: int(get("entities")?, "entities")? as usize,
        n_relations: int(get("relations")?, "relations")? as usize,
        density: num(get("density")?, "density")?,
        holdout_fraction: num(get("holdout_fraction")?, "holdout_fraction")?,
        seed: int(get("seed")?, "seed")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetry_without_holdout_is_closed() {
        let spec = PatternSpec::new(Pattern::Symmetry, 3, 1).density(1.0).holdout_fraction(0.0);
        let ds = generate_pattern_kg(&spec).unwrap();
        assert_eq!(ds.train.len(), 6);
        assert!(ds.holdout.is_empty());
        for t in &ds.train {
            assert!(ds.train.triples().contains(&t.reversed()));
        }
    }

    #[test]
    fn symmetry_holdout_reverses_are_absent_from_train() {
        let spec = PatternSpec::new(Pattern::Symmetry, 50, 1).density(0.1).holdout_fraction(0.2).seed(3);
        let ds = generate_pattern_kg(&spec).unwrap();
        // 0.1 · 1225 pairs, 20 % held out
        assert_eq!(ds.holdout.len(), 25);
        assert_eq!(ds.train.len(), 123 + 98);
        for t in &ds.holdout {
            assert!(ds.train.triples().contains(&t.reversed()));
            assert!(!ds.train.triples().contains(t));
        }
    }

    #[test]
    fn inversion_single_pair() {
        let spec = PatternSpec::new(Pattern::Inversion, 3, 2).density(1.0 / 3.0).holdout_fraction(0.5);
        let ds = generate_pattern_kg(&spec).unwrap();
        let r1 = ds.vocab.relation("inv0_r1").unwrap();
        let r2 = ds.vocab.relation("inv0_r2").unwrap();
        assert_eq!(ds.train.len(), 1);
        assert_eq!(ds.holdout.len(), 1);
        let base = ds.train.triples()[0];
        assert_eq!(base.relation, r2);
        assert_eq!(ds.holdout.triples()[0], Triple::new(base.tail, r1, base.head));
    }

    #[test]
    fn composition_single_chain() {
        let spec = PatternSpec::new(Pattern::Composition, 3, 3).density(1.0 / 3.0).holdout_fraction(0.5);
        let ds = generate_pattern_kg(&spec).unwrap();
        let [r1, r2, r3] = ["comp0_r1", "comp0_r2", "comp0_r3"].map(|n| ds.vocab.relation(n).unwrap());
        assert_eq!(ds.train.len(), 2);
        let a = ds.train.triples().iter().find(|t| t.relation == r2).unwrap();
        let b = ds.train.triples().iter().find(|t| t.relation == r3).unwrap();
        assert_eq!(a.tail, b.head);
        assert_eq!(ds.holdout.triples(), [Triple::new(a.head, r1, b.tail)]);
    }

    #[test]
    fn composition_holdout_is_the_closure() {
        let spec = PatternSpec::new(Pattern::Composition, 40, 3).density(0.05).holdout_fraction(0.3).seed(9);
        let ds = generate_pattern_kg(&spec).unwrap();
        let [r1, r2, r3] = [0, 1, 2];
        let by = |r| ds.train.iter().filter(move |t| t.relation == r);
        let mut implied = BTreeSet::new();
        for a in by(r2) {
            for b in by(r3).filter(|b| b.head == a.tail) {
                implied.insert(Triple::new(a.head, r1, b.tail));
            }
        }
        let got: BTreeSet<Triple> = by(r1).chain(ds.holdout.iter()).copied().collect();
        assert_eq!(got, implied);
    }

    #[test]
    fn antisymmetry_negatives_are_reverses() {
        let spec = PatternSpec::new(Pattern::Antisymmetry, 20, 1).density(0.2).seed(1);
        let ds = generate_pattern_kg(&spec).unwrap();
        assert_eq!(ds.negatives.len(), ds.train.len() + ds.holdout.len());
        for t in ds.train.iter().chain(&ds.holdout) {
            assert!(ds.negatives.triples().contains(&t.reversed()));
        }
    }

    #[test]
    fn preconditions_are_enforced() {
        for spec in [
            PatternSpec::new(Pattern::Symmetry, 2, 1),
            PatternSpec::new(Pattern::Composition, 10, 2),
            PatternSpec::new(Pattern::Inversion, 10, 3),
            PatternSpec::new(Pattern::Symmetry, 10, 1).density(0.0),
            PatternSpec::new(Pattern::Symmetry, 10, 1).holdout_fraction(1.0),
        ] {
            assert!(matches!(generate_pattern_kg(&spec), Err(Error::Config(_))), "{spec:?}");
        }
    }

    #[test]
    fn manifest_round_trips() {
        let spec = PatternSpec::new(Pattern::Inversion, 30, 4).density(0.07).holdout_fraction(0.25).seed(17);
        let ds = generate_pattern_kg(&spec).unwrap();
        assert_eq!(parse_manifest(&ds.manifest()).unwrap(), spec);
    }

    #[test]
    fn written_files_are_identical_across_runs() {
        let spec = PatternSpec::new(Pattern::Antisymmetry, 30, 2).density(0.1).seed(5);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_pattern_kg(&spec).unwrap().write_to(a.path()).unwrap();
        generate_pattern_kg(&spec).unwrap().write_to(b.path()).unwrap();
        for f in ["train.tsv", "holdout.tsv", "negatives.tsv", "manifest.txt"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    fn arb_spec() -> impl Strategy<Value = PatternSpec> {
        (0usize..4, 3usize..40, 1usize..3, 0.01f64..1.0, 0.0f64..0.9, any::<u64>()).prop_map(
            |(p, n, groups, density, holdout, seed)| {
                let pattern = [Pattern::Symmetry, Pattern::Antisymmetry, Pattern::Inversion, Pattern::Composition][p];
                PatternSpec::new(pattern, n, groups * pattern.group_size())
                    .density(density)
                    .holdout_fraction(holdout)
                    .seed(seed)
            },
        )
    }

    proptest! {
        #[test]
        fn train_and_holdout_are_disjoint(spec in arb_spec()) {
            let ds = generate_pattern_kg(&spec).unwrap();
            let train: HashSet<_> = ds.train.iter().collect();
            prop_assert!(ds.holdout.iter().all(|t| !train.contains(t)));
            prop_assert!(ds.train.iter().chain(&ds.holdout).all(|t| ds.vocab.contains_triple(t)));
        }

        #[test]
        fn generation_is_deterministic(spec in arb_spec()) {
            prop_assert_eq!(generate_pattern_kg(&spec).unwrap(), generate_pattern_kg(&spec).unwrap());
        }
    }
}
