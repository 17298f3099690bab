//! Embedding tables and the multi-distance score.
//!
//! Each entity and relation owns one vector per distance term ("family"):
//!
//! | term | family | distance                |
//! |------|--------|-------------------------|
//! | 1    | `i`    | `‖h_i + r_i − t_i‖`     |
//! | 2    | `j`    | `‖h_j + t_j − r_j‖`     |
//! | 3    | `k`    | `‖t_k + r_k − h_k‖`     |
//! | 4    | `l`    | `‖h_l − r_l ∘ t_l‖`     |
//!
//! Families never share storage, so a gradient of term `m` only ever touches
//! family `m`. Term 4 is optional and only allocated when enabled.

use std::fmt;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Triple, Vocabulary};
use crate::error::{Error, Result};
use crate::loss::LossState;

/// One of the four distance terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    /// `‖h + r − t‖`, the plain translation.
    Translation,
    /// `‖h + t − r‖`, symmetric in head and tail.
    Symmetric,
    /// `‖t + r − h‖`, the translation read backwards.
    Inverse,
    /// `‖h − r ∘ t‖`, componentwise scaling.
    Multiplicative,
}

impl Term {
    pub const ALL: [Term; 4] = [
        Term::Translation,
        Term::Symmetric,
        Term::Inverse,
        Term::Multiplicative,
    ];

    /// Position in the weight vector, 0-based.
    pub const fn slot(self) -> usize {
        match self {
            Term::Translation => 0,
            Term::Symmetric => 1,
            Term::Inverse => 2,
            Term::Multiplicative => 3,
        }
    }

    /// 1-based term number as used in configuration files.
    pub const fn number(self) -> usize {
        self.slot() + 1
    }

    pub fn from_number(m: usize) -> Result<Term> {
        match m {
            1 => Ok(Term::Translation),
            2 => Ok(Term::Symmetric),
            3 => Ok(Term::Inverse),
            4 => Ok(Term::Multiplicative),
            _ => Err(Error::Usage(format!("term index must be in 1..=4, got {m}"))),
        }
    }

    /// Family letter (`i`, `j`, `k`, `l`).
    pub const fn family(self) -> char {
        match self {
            Term::Translation => 'i',
            Term::Symmetric => 'j',
            Term::Inverse => 'k',
            Term::Multiplicative => 'l',
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "term {} ({})", self.number(), self.family())
    }
}

/// Norm order of every distance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl Norm {
    pub fn from_order(p: u32) -> Result<Norm> {
        match p {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            _ => Err(Error::Config(format!("norm order must be 1 or 2, got {p}"))),
        }
    }

    pub const fn order(self) -> u32 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }

    /// Norm of `v`.
    pub fn of(self, v: impl Iterator<Item = f64>) -> f64 {
        match self {
            Norm::L1 => v.map(f64::abs).sum(),
            Norm::L2 => v.map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

/// Whether a vector belongs to an entity or to a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    Entity,
    Relation,
}

#[derive(Debug, Clone, PartialEq)]
struct FamilyTable {
    entities: Vec<f64>,
    relations: Vec<f64>,
}

/// Per-family entity and relation vectors, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    // Indexed by `Term::slot`; `None` for a disabled family.
    families: [Option<FamilyTable>; 4],
}

impl EmbeddingSet {
    /// All-zero tables.
    pub fn zeros(num_entities: usize, num_relations: usize, dim: usize, term4: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        let table = || FamilyTable {
            entities: vec![0.0; num_entities * dim],
            relations: vec![0.0; num_relations * dim],
        };
        Ok(EmbeddingSet {
            dim,
            num_entities,
            num_relations,
            families: [
                Some(table()),
                Some(table()),
                Some(table()),
                term4.then(table),
            ],
        })
    }

    /// Uniform initialization on `[−6/√d, 6/√d]`, deterministic in `seed`.
    ///
    /// Values are drawn family by family (i, j, k, then l), entities before
    /// relations, in index order.
    pub fn uniform(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        seed: u64,
        term4: bool,
    ) -> Result<Self> {
        let mut set = Self::zeros(num_entities, num_relations, dim, term4)?;
        let bound = 6.0 / (dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for table in set.families.iter_mut().flatten() {
            for x in table.entities.iter_mut().chain(table.relations.iter_mut()) {
                *x = dist.sample(&mut rng);
            }
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn has_term(&self, term: Term) -> bool {
        self.families[term.slot()].is_some()
    }

    pub fn term4_enabled(&self) -> bool {
        self.has_term(Term::Multiplicative)
    }

    /// Enabled terms in order.
    pub fn terms(&self) -> impl Iterator<Item = Term> + '_ {
        Term::ALL.into_iter().filter(|t| self.has_term(*t))
    }

    fn table(&self, term: Term) -> &FamilyTable {
        self.families[term.slot()]
            .as_ref()
            .unwrap_or_else(|| panic!("{term} is not allocated"))
    }

    fn table_mut(&mut self, term: Term) -> &mut FamilyTable {
        self.families[term.slot()]
            .as_mut()
            .unwrap_or_else(|| panic!("{term} is not allocated"))
    }

    /// Vector of one parameter. Panics if the family is disabled or the index
    /// is out of range.
    pub fn vector(&self, term: Term, kind: ParamKind, index: usize) -> &[f64] {
        let d = self.dim;
        let table = self.table(term);
        let data = match kind {
            ParamKind::Entity => &table.entities,
            ParamKind::Relation => &table.relations,
        };
        &data[index * d..(index + 1) * d]
    }

    pub fn vector_mut(&mut self, term: Term, kind: ParamKind, index: usize) -> &mut [f64] {
        let d = self.dim;
        let table = self.table_mut(term);
        let data = match kind {
            ParamKind::Entity => &mut table.entities,
            ParamKind::Relation => &mut table.relations,
        };
        &mut data[index * d..(index + 1) * d]
    }

    pub fn entity(&self, term: Term, index: usize) -> &[f64] {
        self.vector(term, ParamKind::Entity, index)
    }

    pub fn relation(&self, term: Term, index: usize) -> &[f64] {
        self.vector(term, ParamKind::Relation, index)
    }

    /// Flat table for one family and kind, index-major.
    pub fn table_data(&self, term: Term, kind: ParamKind) -> &[f64] {
        let table = self.table(term);
        match kind {
            ParamKind::Entity => &table.entities,
            ParamKind::Relation => &table.relations,
        }
    }

    pub fn table_data_mut(&mut self, term: Term, kind: ParamKind) -> &mut [f64] {
        let table = self.table_mut(term);
        match kind {
            ParamKind::Entity => &mut table.entities,
            ParamKind::Relation => &mut table.relations,
        }
    }

    /// Rescales every entity vector in every family to unit L2 norm.
    /// Zero vectors are left alone.
    pub fn normalize_entities(&mut self) {
        let d = self.dim;
        for table in self.families.iter_mut().flatten() {
            for v in table.entities.chunks_mut(d) {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    v.iter_mut().for_each(|x| *x /= n);
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.families
            .iter()
            .flatten()
            .all(|t| t.entities.iter().chain(&t.relations).all(|x| x.is_finite()))
    }

    pub fn covers(&self, t: &Triple) -> bool {
        t.head < self.num_entities && t.tail < self.num_entities && t.relation < self.num_relations
    }
}

/// Initializes embeddings sized for `vocab`.
pub fn init_embeddings(vocab: &Vocabulary, dim: usize, seed: u64, term4: bool) -> Result<EmbeddingSet> {
    EmbeddingSet::uniform(vocab.num_entities(), vocab.num_relations(), dim, seed, term4)
}

/// Distance of one term computed from raw head/relation/tail vectors.
#[inline]
pub fn term_distance(term: Term, h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> f64 {
    let it = h.iter().zip(r).zip(t);
    match term {
        Term::Translation => norm.of(it.map(|((h, r), t)| h + r - t)),
        Term::Symmetric => norm.of(it.map(|((h, r), t)| h + t - r)),
        Term::Inverse => norm.of(it.map(|((h, r), t)| t + r - h)),
        Term::Multiplicative => norm.of(it.map(|((h, r), t)| h - r * t)),
    }
}

/// Distance of one term for a triple. Assumes the family is enabled.
#[inline]
pub(crate) fn term_value(term: Term, t: &Triple, emb: &EmbeddingSet, norm: Norm) -> f64 {
    term_distance(
        term,
        emb.entity(term, t.head),
        emb.relation(term, t.relation),
        emb.entity(term, t.tail),
        norm,
    )
}

/// `S_m` for triple `t`; errors when the term's family is not allocated or
/// the triple is outside the tables.
pub fn score_term(term: Term, t: &Triple, emb: &EmbeddingSet, norm: Norm) -> Result<f64> {
    if !emb.has_term(term) {
        return Err(Error::Usage(format!("{term} requires embeddings with that family enabled")));
    }
    if !emb.covers(t) {
        return Err(Error::Usage(format!("triple {t} is outside the embedding tables")));
    }
    Ok(term_value(term, t, emb, norm))
}

/// Weights, offset and norm of the aggregate score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    weights: [f64; 4],
    psi: f64,
    norm: Norm,
    term4: bool,
}

impl Default for ScoreConfig {
    /// `w = (1/4, 1/2, 1/4, 0)`, `ψ = 1.2`, L1, term 4 off.
    fn default() -> Self {
        ScoreConfig {
            weights: [0.25, 0.5, 0.25, 0.0],
            psi: 1.2,
            norm: Norm::L1,
            term4: false,
        }
    }
}

impl ScoreConfig {
    pub fn new(weights: [f64; 4], psi: f64, norm: Norm, term4: bool) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("weights must be finite and nonnegative, got {weights:?}")));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::Config("at least one weight must be positive".into()));
        }
        if !term4 && weights[3] != 0.0 {
            return Err(Error::Config("w4 must be 0 when term 4 is disabled".into()));
        }
        if !psi.is_finite() || psi < 0.0 {
            return Err(Error::Config(format!("psi must be finite and nonnegative, got {psi}")));
        }
        Ok(ScoreConfig {
            weights,
            psi,
            norm,
            term4,
        })
    }

    /// Plain TransE: `w = (1, 0, 0, 0)`, `ψ = 0`.
    pub fn transe(norm: Norm) -> Self {
        ScoreConfig {
            weights: [1.0, 0.0, 0.0, 0.0],
            psi: 0.0,
            norm,
            term4: false,
        }
    }

    pub fn weights(&self) -> [f64; 4] {
        self.weights
    }

    pub fn weight(&self, term: Term) -> f64 {
        self.weights[term.slot()]
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn term4(&self) -> bool {
        self.term4
    }

    /// Terms with a positive weight, in order.
    pub fn active_terms(&self) -> impl Iterator<Item = (Term, f64)> + '_ {
        Term::ALL
            .into_iter()
            .map(|t| (t, self.weights[t.slot()]))
            .filter(|(_, w)| *w > 0.0)
    }

    /// Errors unless every positively weighted family exists in `emb`.
    pub fn check_embeddings(&self, emb: &EmbeddingSet) -> Result<()> {
        for (term, _) in self.active_terms() {
            if !emb.has_term(term) {
                return Err(Error::Config(format!("{term} has positive weight but no embeddings")));
            }
        }
        Ok(())
    }
}

/// `Σ_m w_m·S_m − ψ`. Lower is more plausible.
///
/// Zero-weighted terms are skipped entirely, so `w = (1, 0, 0, 0)`, `ψ = 0`
/// reproduces the translation distance bit for bit.
pub fn score_mde(t: &Triple, emb: &EmbeddingSet, config: &ScoreConfig) -> f64 {
    let mut sum = 0.0;
    for (term, w) in config.active_terms() {
        sum += w * term_value(term, t, emb, config.norm);
    }
    sum - config.psi
}

/// Interval of aggregate scores produced by one disagreement case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseInterval {
    pub description: &'static str,
    /// Smallest attainable score (inclusive).
    pub lower: f64,
    /// Supremum of attainable scores (exclusive).
    pub upper: f64,
    pub holds: bool,
}

/// Outcome of [`check_limit_consistency`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// Bound `a` on half a negative distance (`N < 2a`) used for the check.
    pub cap: f64,
    pub cases: Vec<CaseInterval>,
    pub consistent: bool,
    /// Set when the check does not apply (a translational weight is zero).
    pub not_applicable: Option<String>,
}

/// Checks whether the weights, offset and limits let a single agreeing
/// distance decide the aggregate classification.
///
/// Two disagreement cases are examined. A "positive" distance `P` lies in
/// `[0, γ₁)` and a "negative" one `N` in `[γ₂, 2a)`:
///
/// * terms 1 and 3 negative, term 2 positive;
/// * terms 1 and 3 positive, term 2 negative.
///
/// For each case the attainable range of `w₁S₁ + w₂S₂ + w₃S₃ − ψ` must sit
/// inside `[0, γ₁]`. `cap` defaults to `γ₂`. Purely advisory: inconsistencies
/// are logged as warnings and returned, never raised.
pub fn check_limit_consistency(config: &ScoreConfig, loss: &LossState, cap: Option<f64>) -> ConsistencyReport {
    let [w1, w2, w3, _] = config.weights();
    let cap = cap.unwrap_or(loss.gamma2());
    if w1 <= 0.0 || w2 <= 0.0 || w3 <= 0.0 {
        return ConsistencyReport {
            cap,
            cases: Vec::new(),
            consistent: false,
            not_applicable: Some("weights of terms 1-3 must all be positive".into()),
        };
    }
    let (g1, g2, psi) = (loss.gamma1(), loss.gamma2(), config.psi());
    let outer = w1 + w3;
    let make = |description, lower: f64, upper: f64| CaseInterval {
        description,
        lower,
        upper,
        holds: lower >= 0.0 && upper <= g1,
    };
    let cases = vec![
        make(
            "terms 1,3 negative; term 2 positive",
            outer * g2 - psi,
            outer * 2.0 * cap + w2 * g1 - psi,
        ),
        make(
            "terms 1,3 positive; term 2 negative",
            w2 * g2 - psi,
            outer * g1 + w2 * 2.0 * cap - psi,
        ),
    ];
    let consistent = cases.iter().all(|c| c.holds);
    if !consistent {
        for c in cases.iter().filter(|c| !c.holds) {
            log::warn!(
                "limit consistency: {}: scores span [{:.4}, {:.4}) which is not inside [0, {g1}]",
                c.description,
                c.lower,
                c.upper
            );
        }
    }
    ConsistencyReport {
        cap,
        cases,
        consistent,
        not_applicable: None,
    }
}
