//! Triple files, vocabularies and the filter index used by filtered ranking.
//!
//! Files are UTF-8, one fact per line, `head<TAB>relation<TAB>tail`. Blank
//! lines are ignored.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A `(head, relation, tail)` fact over dense integer indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }

    /// The same fact read in the opposite direction.
    pub const fn reversed(self) -> Self {
        Triple::new(self.tail, self.relation, self.head)
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// Name tables for entities and relations.
///
/// Indices are dense and assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from explicit name lists. Duplicate names are
    /// rejected.
    pub fn from_names<E, R>(entities: E, relations: R) -> Result<Self>
    where
        E: IntoIterator,
        E::Item: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        let mut vocab = Vocabulary::new();
        for name in entities {
            let name = name.into();
            if vocab.entity_index.contains_key(&name) {
                return Err(Error::Data(format!("duplicate entity name {name:?}")));
            }
            vocab.intern_entity(&name);
        }
        for name in relations {
            let name = name.into();
            if vocab.relation_index.contains_key(&name) {
                return Err(Error::Data(format!("duplicate relation name {name:?}")));
            }
            vocab.intern_relation(&name);
        }
        Ok(vocab)
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, index: usize) -> Option<&str> {
        self.entity_names.get(index).map(String::as_str)
    }

    pub fn relation_name(&self, index: usize) -> Option<&str> {
        self.relation_names.get(index).map(String::as_str)
    }

    /// Returns the index of `name`, adding it if unseen.
    pub fn intern_entity(&mut self, name: &str) -> usize {
        if let Some(&i) = self.entity_index.get(name) {
            return i;
        }
        let i = self.entity_names.len();
        self.entity_names.push(name.to_owned());
        self.entity_index.insert(name.to_owned(), i);
        i
    }

    pub fn intern_relation(&mut self, name: &str) -> usize {
        if let Some(&i) = self.relation_index.get(name) {
            return i;
        }
        let i = self.relation_names.len();
        self.relation_names.push(name.to_owned());
        self.relation_index.insert(name.to_owned(), i);
        i
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        t.head < self.num_entities()
            && t.tail < self.num_entities()
            && t.relation < self.num_relations()
    }

    /// True when `other` starts with exactly this vocabulary's names in the
    /// same order (it may have appended more).
    pub fn is_prefix_of(&self, other: &Vocabulary) -> bool {
        other.entity_names.len() >= self.entity_names.len()
            && other.relation_names.len() >= self.relation_names.len()
            && other.entity_names[..self.entity_names.len()] == self.entity_names[..]
            && other.relation_names[..self.relation_names.len()] == self.relation_names[..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitRole {
    Train,
    Valid,
    Test,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::Train => "train",
            SplitRole::Valid => "valid",
            SplitRole::Test => "test",
        })
    }
}

/// An ordered, duplicate-free list of triples belonging to one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleSet {
    triples: Vec<Triple>,
    role: SplitRole,
}

impl TripleSet {
    /// Keeps the first occurrence of each triple and returns how many
    /// duplicates were dropped.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>, role: SplitRole) -> (Self, usize) {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut dropped = 0;
        for t in triples {
            if seen.insert(t) {
                kept.push(t);
            } else {
                dropped += 1;
            }
        }
        (TripleSet { triples: kept, role }, dropped)
    }

    pub fn empty(role: SplitRole) -> Self {
        TripleSet {
            triples: Vec::new(),
            role,
        }
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn role(&self) -> SplitRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.triples.iter()
    }
}

impl<'a> IntoIterator for &'a TripleSet {
    type Item = &'a Triple;
    type IntoIter = std::slice::Iter<'a, Triple>;

    fn into_iter(self) -> Self::IntoIter {
        self.triples.iter()
    }
}

/// Parses triples from TSV text. `origin` is only used in error messages.
pub fn parse_triples(
    text: &str,
    origin: &Path,
    role: SplitRole,
    vocab: Option<Vocabulary>,
) -> Result<(TripleSet, Vocabulary)> {
    let mut vocab = vocab.unwrap_or_default();
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                message: format!("field {} is empty", pos + 1),
            });
        }
        let head = vocab.intern_entity(fields[0]);
        let relation = vocab.intern_relation(fields[1]);
        let tail = vocab.intern_entity(fields[2]);
        raw.push(Triple::new(head, relation, tail));
    }
    if raw.is_empty() {
        return Err(Error::Data(format!("{}: no triples", origin.display())));
    }
    let (set, dropped) = TripleSet::from_triples(raw, role);
    if dropped > 0 {
        log::info!(
            "{}: dropped {dropped} duplicate triple(s), kept {}",
            origin.display(),
            set.len()
        );
    }
    Ok((set, vocab))
}

/// Loads a TSV triple file.
///
/// When `vocab` is given (valid/test loading) it is extended with any unseen
/// names rather than rejecting them; those entities receive embeddings that
/// are initialized but never trained.
pub fn load_triples(
    path: &Path,
    role: SplitRole,
    vocab: Option<Vocabulary>,
) -> Result<(TripleSet, Vocabulary)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
    parse_triples(&text, path, role, vocab)
}

pub fn save_triples(path: &Path, set: &TripleSet, vocab: &Vocabulary) -> Result<()> {
    let file = fs::File::create(path)
        .map_err(|e| Error::io(format!("cannot create {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    for t in set {
        let (Some(h), Some(r), Some(tl)) = (
            vocab.entity_name(t.head),
            vocab.relation_name(t.relation),
            vocab.entity_name(t.tail),
        ) else {
            return Err(Error::Data(format!("triple {t} is outside the vocabulary")));
        };
        writeln!(out, "{h}\t{r}\t{tl}")
            .map_err(|e| Error::io(format!("cannot write {}", path.display()), e))?;
    }
    out.flush()
        .map_err(|e| Error::io(format!("cannot write {}", path.display()), e))
}

/// Membership over the union of all splits, for the filtered ranking setting.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    known: HashSet<Triple>,
}

impl FilterIndex {
    pub fn build(train: &TripleSet, valid: &TripleSet, test: &TripleSet) -> Self {
        Self::from_sets([train, valid, test])
    }

    pub fn from_sets<'a>(sets: impl IntoIterator<Item = &'a TripleSet>) -> Self {
        let known = sets.into_iter().flat_map(|s| s.iter().copied()).collect();
        FilterIndex { known }
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(TripleSet, Vocabulary)> {
        parse_triples(text, Path::new("mem.tsv"), SplitRole::Train, None)
    }

    #[test]
    fn two_lines_two_triples() {
        let (set, vocab) = parse("a\tr\tb\nb\tr\ta\n").unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(vocab.entity_names(), ["a", "b"]);
        assert_eq!(vocab.relation_names(), ["r"]);
        assert_eq!(set.triples()[0], Triple::new(0, 0, 1));
        assert_eq!(set.triples()[1], Triple::new(1, 0, 0));
    }

    #[test]
    fn duplicate_lines_are_dropped() {
        let (set, _) = parse("a\tr\tb\na\tr\tb\n").unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn wrong_field_count_names_line() {
        let err = parse("a\tr\tb\n\na\tr\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("a\tr\tb\tc\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse(""), Err(Error::Data(_))));
        assert!(matches!(parse("\n  \n"), Err(Error::Data(_))));
    }

    #[test]
    fn crlf_is_accepted() {
        let (set, vocab) = parse("a\tr\tb\r\n").unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(vocab.entity_name(1), Some("b"));
    }

    #[test]
    fn supplied_vocab_is_extended() {
        let (_, vocab) = parse("a\tr\tb\n").unwrap();
        let (test, vocab) =
            parse_triples("b\ts\tc\n", Path::new("t"), SplitRole::Test, Some(vocab)).unwrap();
        assert_eq!(vocab.num_entities(), 3);
        assert_eq!(vocab.num_relations(), 2);
        assert_eq!(test.triples()[0], Triple::new(1, 1, 2));
        assert_eq!(test.role(), SplitRole::Test);
    }

    #[test]
    fn vocabulary_round_trips_names() {
        let (_, vocab) = parse("x\tp\ty\ny\tq\tz\n").unwrap();
        for (i, name) in vocab.entity_names().iter().enumerate() {
            assert_eq!(vocab.entity(name), Some(i));
            assert_eq!(vocab.entity_name(i), Some(name.as_str()));
        }
        for (i, name) in vocab.relation_names().iter().enumerate() {
            assert_eq!(vocab.relation(name), Some(i));
        }
    }

    #[test]
    fn from_names_rejects_duplicates() {
        assert!(Vocabulary::from_names(["a", "a"], ["r"]).is_err());
        assert!(Vocabulary::from_names(["a", "b"], ["r", "r"]).is_err());
    }

    #[test]
    fn save_then_load_is_identity() {
        let (set, vocab) = parse("a\tr\tb\nb\tr\tc\nc\ts\ta\n").unwrap();
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.flush().unwrap();
        save_triples(file.path(), &set, &vocab).unwrap();
        let (again, vocab2) = load_triples(file.path(), SplitRole::Train, None).unwrap();
        assert_eq!(again, set);
        assert_eq!(vocab2, vocab);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_triples(Path::new("/nonexistent/x.tsv"), SplitRole::Train, None).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.tsv"));
    }

    #[test]
    fn filter_index_membership() {
        let (train, _) = TripleSet::from_triples([Triple::new(0, 0, 1)], SplitRole::Train);
        let valid = TripleSet::empty(SplitRole::Valid);
        let (test, _) = TripleSet::from_triples([Triple::new(1, 0, 0)], SplitRole::Test);
        let index = FilterIndex::build(&train, &valid, &test);
        assert!(index.contains(&Triple::new(0, 0, 1)));
        assert!(index.contains(&Triple::new(1, 0, 0)));
        assert!(!index.contains(&Triple::new(0, 0, 2)));
    }

    #[test]
    fn filter_index_cardinality_is_union_size() {
        // Oracle: an independent BTreeSet union over a 10-triple toy instance.
        let all: Vec<Triple> = (0..10).map(|i| Triple::new(i % 4, i % 2, (i * 3) % 5)).collect();
        let (train, _) = TripleSet::from_triples(all[0..5].iter().copied(), SplitRole::Train);
        let (valid, _) = TripleSet::from_triples(all[3..8].iter().copied(), SplitRole::Valid);
        let (test, _) = TripleSet::from_triples(all[6..10].iter().copied(), SplitRole::Test);
        let union: std::collections::BTreeSet<Triple> = train
            .iter()
            .chain(valid.iter())
            .chain(test.iter())
            .copied()
            .collect();
        let index = FilterIndex::build(&train, &valid, &test);
        let duplicates = train.len() + valid.len() + test.len() - union.len();
        assert!(duplicates > 0);
        assert_eq!(index.len(), train.len() + valid.len() + test.len() - duplicates);
        assert_eq!(index.len(), union.len());
    }
}
