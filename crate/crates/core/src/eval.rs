//! Link-prediction ranking: MR, MRR and hits@N, raw and filtered.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{FilterIndex, Triple, TripleSet};
use crate::error::{Error, Result};
use crate::model::{score_mde, EmbeddingSet, ScoreConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    Raw,
    Filtered,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Raw => "raw",
            Setting::Filtered => "filtered",
        }
    }

    /// Parses a comma-separated list such as `raw,filtered`.
    pub fn parse_list(s: &str) -> Result<Vec<Setting>> {
        let mut out: Vec<Setting> = s.split(',').map(|p| p.trim().parse()).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Setting::Raw),
            "filtered" => Ok(Setting::Filtered),
            _ => Err(Error::Usage(format!("unknown setting {s:?} (expected raw or filtered)"))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which ranks a report aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportSide {
    Head,
    Tail,
    /// Head and tail ranks pooled.
    Both,
}

impl ReportSide {
    pub fn name(self) -> &'static str {
        match self {
            ReportSide::Head => "head",
            ReportSide::Tail => "tail",
            ReportSide::Both => "both",
        }
    }
}

fn substitute(t: &Triple, side: Side, e: usize) -> Triple {
    match side {
        Side::Head => Triple::new(e, t.relation, t.tail),
        Side::Tail => Triple::new(t.head, t.relation, e),
    }
}

/// Mid-rank of `t` among its `better` strictly better and `ties` equally
/// scored competitors, rounded half up.
fn mid_rank(better: usize, ties: usize) -> usize {
    1 + better + ties.div_ceil(2)
}

/// Raw and filtered rank of `t` against every entity substituted into `side`.
///
/// Lower scores rank first. The filtered rank ignores candidates that are
/// known triples according to `filter`; without a filter both ranks agree.
pub fn rank_both(
    t: &Triple,
    emb: &EmbeddingSet,
    config: &ScoreConfig,
    side: Side,
    filter: Option<&FilterIndex>,
) -> (usize, usize) {
    let target = score_mde(t, emb, config);
    let original = match side {
        Side::Head => t.head,
        Side::Tail => t.tail,
    };
    let (mut better, mut ties) = (0, 0);
    let (mut f_better, mut f_ties) = (0, 0);
    for e in (0..emb.num_entities()).filter(|&e| e != original) {
        let c = substitute(t, side, e);
        let s = score_mde(&c, emb, config);
        let (is_better, is_tie) = (s < target, s == target);
        better += usize::from(is_better);
        ties += usize::from(is_tie);
        if filter.is_some_and(|f| f.contains(&c)) {
            continue;
        }
        f_better += usize::from(is_better);
        f_ties += usize::from(is_tie);
    }
    (mid_rank(better, ties), mid_rank(f_better, f_ties))
}

/// Rank of `t`, filtered when `filter` is given.
pub fn rank_triple(
    t: &Triple,
    emb: &EmbeddingSet,
    config: &ScoreConfig,
    side: Side,
    filter: Option<&FilterIndex>,
) -> usize {
    let (raw, filtered) = rank_both(t, emb, config, side, filter);
    if filter.is_some() {
        filtered
    } else {
        raw
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub setting: Setting,
    pub side: ReportSide,
    pub n: usize,
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl RankingReport {
    /// Aggregates ranks; `ranks` must be non-empty and every rank ≥ 1.
    pub fn from_ranks(setting: Setting, side: ReportSide, ranks: &[usize]) -> Self {
        assert!(!ranks.is_empty(), "no ranks to aggregate");
        let n = ranks.len() as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        RankingReport {
            setting,
            side,
            n: ranks.len(),
            mr: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits1: hits(1),
            hits3: hits(3),
            hits10: hits(10),
        }
    }

    pub fn hits(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.hits1),
            3 => Some(self.hits3),
            10 => Some(self.hits10),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub reports: Vec<RankingReport>,
}

pub const CSV_HEADER: &str = "setting,side,n,mr,mrr,hits1,hits3,hits10";

impl EvaluationReport {
    pub fn get(&self, setting: Setting, side: ReportSide) -> Option<&RankingReport> {
        self.reports.iter().find(|r| r.setting == setting && r.side == side)
    }

    /// One `[setting side]` block of `key = value` lines per report.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.reports {
            let _ = writeln!(s, "[{} {}]", r.setting, r.side.name());
            let _ = writeln!(s, "n = {}", r.n);
            let _ = writeln!(s, "mr = {:.4}", r.mr);
            let _ = writeln!(s, "mrr = {:.6}", r.mrr);
            let _ = writeln!(s, "hits@1 = {:.6}", r.hits1);
            let _ = writeln!(s, "hits@3 = {:.6}", r.hits3);
            let _ = writeln!(s, "hits@10 = {:.6}", r.hits10);
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.reports {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.setting,
                r.side.name(),
                r.n,
                r.mr,
                r.mrr,
                r.hits1,
                r.hits3,
                r.hits10
            );
        }
        s
    }
}

/// Ranks every test triple on both sides under each requested setting.
///
/// Filtered ranks need `filter`. Triples are ranked in parallel on the
/// current rayon pool; the result does not depend on the thread count.
pub fn evaluate(
    test: &TripleSet,
    emb: &EmbeddingSet,
    config: &ScoreConfig,
    filter: Option<&FilterIndex>,
    settings: &[Setting],
) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    if settings.is_empty() {
        return Err(Error::Usage("no evaluation setting requested".into()));
    }
    if settings.contains(&Setting::Filtered) && filter.is_none() {
        return Err(Error::Usage("filtered evaluation needs a filter index".into()));
    }
    config.check_embeddings(emb)?;
    if let Some(t) = test.iter().find(|t| !emb.covers(t)) {
        return Err(Error::Data(format!("test triple {t} is outside the model's vocabulary")));
    }
    // (raw head, raw tail, filtered head, filtered tail) per triple.
    let ranks: Vec<[usize; 4]> = test
        .triples()
        .par_iter()
        .map(|t| {
            let (rh, fh) = rank_both(t, emb, config, Side::Head, filter);
            let (rt, ft) = rank_both(t, emb, config, Side::Tail, filter);
            [rh, rt, fh, ft]
        })
        .collect();
    let mut reports = Vec::new();
    for &setting in settings {
        let offset = if setting == Setting::Filtered { 2 } else { 0 };
        let head: Vec<usize> = ranks.iter().map(|r| r[offset]).collect();
        let tail: Vec<usize> = ranks.iter().map(|r| r[offset + 1]).collect();
        let both: Vec<usize> = head.iter().chain(&tail).copied().collect();
        reports.push(RankingReport::from_ranks(setting, ReportSide::Head, &head));
        reports.push(RankingReport::from_ranks(setting, ReportSide::Tail, &tail));
        reports.push(RankingReport::from_ranks(setting, ReportSide::Both, &both));
    }
    Ok(EvaluationReport { reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitRole;
    use crate::model::{Norm, ParamKind, Term};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn metrics_from_hand_ranks() {
        let r = RankingReport::from_ranks(Setting::Raw, ReportSide::Both, &[1, 4, 10]);
        assert_relative_eq!(r.mr, 5.0);
        assert_relative_eq!(r.mrr, 0.45, epsilon = 1e-12);
        assert_relative_eq!(r.hits1, 1.0 / 3.0);
        assert_relative_eq!(r.hits3, 1.0 / 3.0);
        assert_relative_eq!(r.hits10, 1.0);
        let ones = RankingReport::from_ranks(Setting::Raw, ReportSide::Head, &[1, 1, 1]);
        assert_eq!((ones.mr, ones.mrr, ones.hits1, ones.hits10), (1.0, 1.0, 1.0, 1.0));
    }

    fn line_model(positions: &[f64]) -> (EmbeddingSet, ScoreConfig) {
        // One relation translating by +1; entity e sits at positions[e].
        let mut emb = EmbeddingSet::zeros(positions.len(), 1, 1, false).unwrap();
        for (e, &x) in positions.iter().enumerate() {
            emb.vector_mut(Term::Translation, ParamKind::Entity, e)[0] = x;
        }
        emb.vector_mut(Term::Translation, ParamKind::Relation, 0)[0] = 1.0;
        (emb, ScoreConfig::transe(Norm::L1))
    }

    #[test]
    fn best_candidate_ranks_first() {
        let (emb, c) = line_model(&[0.0, 1.0, 5.0, 9.0]);
        assert_eq!(rank_triple(&Triple::new(0, 0, 1), &emb, &c, Side::Tail, None), 1);
        // Distance 4 loses to tails 1 (0) and 0 (1), beats tail 3 (8).
        assert_eq!(rank_triple(&Triple::new(0, 0, 2), &emb, &c, Side::Tail, None), 3);
    }

    #[test]
    fn filtering_one_better_known_triple_gains_one() {
        let (emb, c) = line_model(&[0.0, 1.0, 5.0, 9.0]);
        let t = Triple::new(0, 0, 2);
        let (known, _) = TripleSet::from_triples([Triple::new(0, 0, 1)], SplitRole::Train);
        let filter = FilterIndex::from_sets([&known]);
        let raw = rank_triple(&t, &emb, &c, Side::Tail, None);
        let filtered = rank_triple(&t, &emb, &c, Side::Tail, Some(&filter));
        assert_eq!(raw - filtered, 1);
    }

    #[test]
    fn constant_scores_give_the_middle_rank() {
        for n in [3usize, 7, 21, 50] {
            let emb = EmbeddingSet::zeros(n, 1, 4, false).unwrap();
            let c = ScoreConfig::default();
            let r = rank_triple(&Triple::new(0, 0, 1), &emb, &c, Side::Head, None);
            // n candidates in total, all tied
            assert_eq!(r, 1 + n / 2);
            if n % 2 == 1 {
                assert_eq!(r, n.div_ceil(2));
            }
        }
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let (emb, c) = line_model(&[0.0, 1.0]);
        let empty = TripleSet::empty(SplitRole::Test);
        assert!(matches!(evaluate(&empty, &emb, &c, None, &[Setting::Raw]), Err(Error::Data(_))));
    }

    #[test]
    fn report_blocks_and_csv() {
        let (emb, c) = line_model(&[0.0, 1.0, 5.0, 9.0]);
        let (test, _) = TripleSet::from_triples([Triple::new(0, 0, 2), Triple::new(1, 0, 3)], SplitRole::Test);
        let filter = FilterIndex::from_sets([&test]);
        let rep = evaluate(&test, &emb, &c, Some(&filter), &[Setting::Raw, Setting::Filtered]).unwrap();
        assert_eq!(rep.reports.len(), 6);
        assert_eq!(rep.to_text().matches("mrr = ").count(), 6);
        assert_eq!(rep.to_csv().lines().count(), 7);
        let raw = rep.get(Setting::Raw, ReportSide::Both).unwrap();
        let filtered = rep.get(Setting::Filtered, ReportSide::Both).unwrap();
        assert!(filtered.mrr >= raw.mrr);
        assert_eq!(raw.n, 4);
    }

    #[test]
    fn settings_parse() {
        assert_eq!(Setting::parse_list("filtered, raw").unwrap(), vec![Setting::Raw, Setting::Filtered]);
        assert!(Setting::parse_list("raw,both").is_err());
    }

    /// Sorts all candidates, locates the block of scores equal to the
    /// target's and returns the rounded-up midpoint of its positions.
    pub(crate) fn oracle_rank(
        t: &Triple,
        emb: &EmbeddingSet,
        c: &ScoreConfig,
        side: Side,
        filter: Option<&FilterIndex>,
    ) -> usize {
        let mut scores: Vec<f64> = (0..emb.num_entities())
            .map(|e| substitute(t, side, e))
            .filter(|cand| cand == t || !filter.is_some_and(|f| f.contains(cand)))
            .map(|cand| score_mde(&cand, emb, c))
            .collect();
        scores.sort_by(f64::total_cmp);
        let target = score_mde(t, emb, c);
        let first = scores.iter().position(|&s| s == target).unwrap() + 1;
        let last = scores.iter().rposition(|&s| s == target).unwrap() + 1;
        (first + last).div_ceil(2)
    }

    proptest! {
        #[test]
        fn ranking_matches_sorting_oracle(
            n in 2usize..20,
            seed in any::<u64>(),
            coarse in any::<bool>(),
            facts in prop::collection::vec((0usize..20, 0usize..20), 0..30),
            probe in (0usize..20, 0usize..20),
        ) {
            let mut emb = EmbeddingSet::uniform(n, 1, 2, seed, false).unwrap();
            if coarse {
                // Quantize so ties actually occur.
                for term in Term::ALL.into_iter().take(3) {
                    for x in emb.table_data_mut(term, ParamKind::Entity) {
                        *x = x.round();
                    }
                    for x in emb.table_data_mut(term, ParamKind::Relation) {
                        *x = x.round();
                    }
                }
            }
            let c = ScoreConfig::default();
            let (known, _) = TripleSet::from_triples(
                facts.into_iter().map(|(h, t)| Triple::new(h % n, 0, t % n)),
                SplitRole::Train,
            );
            let filter = FilterIndex::from_sets([&known]);
            let t = Triple::new(probe.0 % n, 0, probe.1 % n);
            for side in [Side::Head, Side::Tail] {
                let raw = rank_triple(&t, &emb, &c, side, None);
                let filtered = rank_triple(&t, &emb, &c, side, Some(&filter));
                prop_assert_eq!(raw, oracle_rank(&t, &emb, &c, side, None));
                prop_assert_eq!(filtered, oracle_rank(&t, &emb, &c, side, Some(&filter)));
                prop_assert!(filtered <= raw);
            }
        }

        #[test]
        fn evaluation_is_repeatable(seed in any::<u64>()) {
            let emb = EmbeddingSet::uniform(12, 2, 3, seed, false).unwrap();
            let (test, _) = TripleSet::from_triples(
                (0..10).map(|i| Triple::new(i, i % 2, (i * 5 + 1) % 12)),
                SplitRole::Test,
            );
            let filter = FilterIndex::from_sets([&test]);
            let c = ScoreConfig::default();
            let a = evaluate(&test, &emb, &c, Some(&filter), &[Setting::Raw, Setting::Filtered]).unwrap();
            let b = evaluate(&test, &emb, &c, Some(&filter), &[Setting::Raw, Setting::Filtered]).unwrap();
            prop_assert_eq!(&a, &b);
            for r in &a.reports {
                prop_assert!(r.hits1 <= r.hits3 && r.hits3 <= r.hits10 && r.hits10 <= 1.0);
                prop_assert!(r.mrr > 0.0 && r.mrr <= 1.0 && r.mr >= 1.0);
            }
        }
    }
}
