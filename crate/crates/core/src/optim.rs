//! Analytic gradients of the limit loss and sparse optimizers.
//!
//! Gradients are collected per touched vector in a [`GradientBuffer`];
//! repeated touches of one vector inside a batch are summed, and the
//! optimizer then makes one update per touched vector.

use std::collections::HashMap;

use crate::data::Triple;
use crate::error::{Error, Result};
use crate::loss::{LossState, LossValue};
use crate::model::{score_mde, EmbeddingSet, Norm, ParamKind, ScoreConfig, Term};

/// Identifies one vector: family, entity-or-relation, index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub term: Term,
    pub kind: ParamKind,
    pub index: usize,
}

impl ParamKey {
    pub const fn entity(term: Term, index: usize) -> Self {
        ParamKey {
            term,
            kind: ParamKind::Entity,
            index,
        }
    }

    pub const fn relation(term: Term, index: usize) -> Self {
        ParamKey {
            term,
            kind: ParamKind::Relation,
            index,
        }
    }
}

/// Sparse gradient: only vectors touched by the batch have an entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientBuffer {
    dim: usize,
    grads: HashMap<ParamKey, Vec<f64>>,
}

impl GradientBuffer {
    pub fn new(dim: usize) -> Self {
        GradientBuffer {
            dim,
            grads: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `scale · g` to the entry of `key`.
    pub fn add(&mut self, key: ParamKey, scale: f64, g: &[f64]) {
        debug_assert_eq!(g.len(), self.dim);
        let entry = self.grads.entry(key).or_insert_with(|| vec![0.0; self.dim]);
        for (e, x) in entry.iter_mut().zip(g) {
            *e += scale * x;
        }
    }

    fn add_scaled_product(&mut self, key: ParamKey, scale: f64, g: &[f64], other: &[f64]) {
        let entry = self.grads.entry(key).or_insert_with(|| vec![0.0; self.dim]);
        for ((e, x), o) in entry.iter_mut().zip(g).zip(other) {
            *e += scale * x * o;
        }
    }

    pub fn get(&self, key: &ParamKey) -> Option<&[f64]> {
        self.grads.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &[f64])> {
        self.grads.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Keys in sorted order.
    pub fn sorted_keys(&self) -> Vec<ParamKey> {
        let mut keys: Vec<_> = self.grads.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().flatten().all(|x| x.is_finite())
    }

    /// Merges another buffer into this one.
    pub fn merge(&mut self, other: GradientBuffer) {
        for (k, v) in other.grads {
            self.add(k, 1.0, &v);
        }
    }
}

/// Gradient of a norm at `v`, written into `out`.
///
/// L1 gives `sign(v)` with 0 at 0; L2 gives `v / ‖v‖₂`, or 0 when `v = 0`.
pub fn norm_gradient(v: &[f64], norm: Norm, out: &mut [f64]) {
    match norm {
        Norm::L1 => {
            for (o, x) in out.iter_mut().zip(v) {
                *o = if *x > 0.0 {
                    1.0
                } else if *x < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
        }
        Norm::L2 => {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                for (o, x) in out.iter_mut().zip(v) {
                    *o = x / n;
                }
            } else {
                out.iter_mut().for_each(|o| *o = 0.0);
            }
        }
    }
}

/// Partial derivatives of one distance term.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGradient {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
}

fn residual(term: Term, h: &[f64], r: &[f64], t: &[f64], out: &mut [f64]) {
    let it = out.iter_mut().zip(h.iter().zip(r).zip(t));
    match term {
        Term::Translation => it.for_each(|(o, ((h, r), t))| *o = h + r - t),
        Term::Symmetric => it.for_each(|(o, ((h, r), t))| *o = h + t - r),
        Term::Inverse => it.for_each(|(o, ((h, r), t))| *o = t + r - h),
        Term::Multiplicative => it.for_each(|(o, ((h, r), t))| *o = h - r * t),
    }
}

/// Gradient of `S_m` with respect to the head, relation and tail vectors of
/// family `m`.
pub fn grad_score_term(term: Term, t: &Triple, emb: &EmbeddingSet, norm: Norm) -> Result<TermGradient> {
    if !emb.has_term(term) {
        return Err(Error::Usage(format!("{term} is not allocated")));
    }
    if !emb.covers(t) {
        return Err(Error::Usage(format!("triple {t} is outside the embedding tables")));
    }
    let d = emb.dim();
    let (h, r, tl) = (
        emb.entity(term, t.head),
        emb.relation(term, t.relation),
        emb.entity(term, t.tail),
    );
    let mut v = vec![0.0; d];
    residual(term, h, r, tl, &mut v);
    let mut g = vec![0.0; d];
    norm_gradient(&v, norm, &mut g);
    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
    Ok(match term {
        Term::Translation => TermGradient {
            head: g.clone(),
            relation: g,
            tail: neg,
        },
        Term::Symmetric => TermGradient {
            head: g.clone(),
            relation: neg,
            tail: g,
        },
        Term::Inverse => TermGradient {
            head: neg,
            relation: g.clone(),
            tail: g,
        },
        Term::Multiplicative => TermGradient {
            relation: neg.iter().zip(tl).map(|(n, t)| n * t).collect(),
            tail: neg.iter().zip(r).map(|(n, r)| n * r).collect(),
            head: g,
        },
    })
}

/// Adds `scale · ∂S_m/∂(h, r, t)` into `buf`. `v` and `g` are scratch.
fn accumulate_term(
    buf: &mut GradientBuffer,
    term: Term,
    t: &Triple,
    emb: &EmbeddingSet,
    norm: Norm,
    scale: f64,
    v: &mut [f64],
    g: &mut [f64],
) {
    let (h, r, tl) = (
        emb.entity(term, t.head),
        emb.relation(term, t.relation),
        emb.entity(term, t.tail),
    );
    residual(term, h, r, tl, v);
    norm_gradient(v, norm, g);
    let head = ParamKey::entity(term, t.head);
    let rel = ParamKey::relation(term, t.relation);
    let tail = ParamKey::entity(term, t.tail);
    match term {
        Term::Translation => {
            buf.add(head, scale, g);
            buf.add(rel, scale, g);
            buf.add(tail, -scale, g);
        }
        Term::Symmetric => {
            buf.add(head, scale, g);
            buf.add(rel, -scale, g);
            buf.add(tail, scale, g);
        }
        Term::Inverse => {
            buf.add(head, -scale, g);
            buf.add(rel, scale, g);
            buf.add(tail, scale, g);
        }
        Term::Multiplicative => {
            buf.add(head, scale, g);
            buf.add_scaled_product(rel, -scale, g, tl);
            buf.add_scaled_product(tail, -scale, g, r);
        }
    }
}

/// Loss value and gradient over one batch, sharing the score computation.
///
/// Positives with `f(τ) > L⁺` contribute `+β₁·w_m·∇S_m`; negatives with
/// `f(τ′) < L⁻` contribute `−β₂·w_m·∇S_m`. Inactive hinges contribute
/// nothing, so an all-inactive batch yields an empty buffer.
pub fn loss_and_grad(
    positives: &[Triple],
    negatives: &[Triple],
    emb: &EmbeddingSet,
    config: &ScoreConfig,
    state: &LossState,
) -> (LossValue, GradientBuffer) {
    let d = emb.dim();
    let mut buf = GradientBuffer::new(d);
    let (mut v, mut g) = (vec![0.0; d], vec![0.0; d]);
    let mut value = LossValue::default();
    let sides = [
        (positives, state.beta1(), true),
        (negatives, state.beta2(), false),
    ];
    for (triples, beta, positive) in sides {
        for t in triples {
            let f = score_mde(t, emb, config);
            let hinge = if positive {
                state.positive_hinge(f)
            } else {
                state.negative_hinge(f)
            };
            if hinge <= 0.0 {
                continue;
            }
            if positive {
                value.pos += hinge;
            } else {
                value.neg += hinge;
            }
            let sign = if positive { 1.0 } else { -1.0 };
            for (term, w) in config.active_terms() {
                accumulate_term(&mut buf, term, t, emb, config.norm(), sign * beta * w, &mut v, &mut g);
            }
        }
    }
    value.total = state.beta1() * value.pos + state.beta2() * value.neg;
    (value, buf)
}

/// Gradient of the limit loss over one batch.
pub fn grad_loss(
    positives: &[Triple],
    negatives: &[Triple],
    emb: &EmbeddingSet,
    config: &ScoreConfig,
    state: &LossState,
) -> GradientBuffer {
    loss_and_grad(positives, negatives, emb, config, state).1
}

/// Running averages of one vector, per component.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    /// `E[g²]`
    pub sq_grad: Vec<f64>,
    /// `E[Δx²]`
    pub sq_update: Vec<f64>,
}

/// Adadelta with a global multiplier on the applied update and lazily
/// allocated per-vector accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    rho: f64,
    eps: f64,
    lr: f64,
    accum: HashMap<ParamKey, Accumulator>,
}

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;

impl AdadeltaState {
    pub fn new(rho: f64, eps: f64, lr: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(AdadeltaState {
            rho,
            eps,
            lr,
            accum: HashMap::new(),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn accumulator(&self, key: &ParamKey) -> Option<&Accumulator> {
        self.accum.get(key)
    }

    pub fn num_tracked(&self) -> usize {
        self.accum.len()
    }

    /// Accumulators in sorted key order.
    pub fn sorted_accumulators(&self) -> Vec<(ParamKey, &Accumulator)> {
        let mut v: Vec<_> = self.accum.iter().map(|(k, a)| (*k, a)).collect();
        v.sort_unstable_by_key(|(k, _)| *k);
        v
    }

    pub fn insert_accumulator(&mut self, key: ParamKey, acc: Accumulator) {
        self.accum.insert(key, acc);
    }

    /// Applies one update for every vector present in `grads`. Other
    /// parameters are not touched. Nothing changes if any gradient is
    /// non-finite.
    pub fn step(&mut self, grads: &GradientBuffer, emb: &mut EmbeddingSet) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Numerical("non-finite gradient; update aborted".into()));
        }
        let (rho, eps, lr, d) = (self.rho, self.eps, self.lr, emb.dim());
        for (key, g) in grads.iter() {
            let acc = self.accum.entry(*key).or_insert_with(|| Accumulator {
                sq_grad: vec![0.0; d],
                sq_update: vec![0.0; d],
            });
            let x = emb.vector_mut(key.term, key.kind, key.index);
            for c in 0..d {
                let gc = g[c];
                acc.sq_grad[c] = rho * acc.sq_grad[c] + (1.0 - rho) * gc * gc;
                let dx = -((acc.sq_update[c] + eps).sqrt() / (acc.sq_grad[c] + eps).sqrt()) * gc;
                acc.sq_update[c] = rho * acc.sq_update[c] + (1.0 - rho) * dx * dx;
                x[c] += lr * dx;
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdadeltaState::step`].
pub fn adadelta_step(state: &mut AdadeltaState, grads: &GradientBuffer, emb: &mut EmbeddingSet) -> Result<()> {
    state.step(grads, emb)
}

/// Optimizer used by the trainer. Plain SGD exists for debugging.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adadelta(AdadeltaState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn step(&mut self, grads: &GradientBuffer, emb: &mut EmbeddingSet) -> Result<()> {
        match self {
            Optimizer::Adadelta(state) => state.step(grads, emb),
            Optimizer::Sgd { lr } => {
                if !grads.all_finite() {
                    return Err(Error::Numerical("non-finite gradient; update aborted".into()));
                }
                for (key, g) in grads.iter() {
                    let x = emb.vector_mut(key.term, key.kind, key.index);
                    for (x, g) in x.iter_mut().zip(g) {
                        *x -= *lr * g;
                    }
                }
                Ok(())
            }
        }
    }
}
