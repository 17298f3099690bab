//! Portable binary checkpoints.
//!
//! All integers and floats are little-endian. Layout (format version 1):
//!
//! ```text
//! offset  size  field
//!      0     8  magic "MDECKPT\0"
//!      8     4  u32 format version (1)
//!     12     4  u32 dimension d
//!     16     8  u64 |E|
//!     24     8  u64 |R|
//!     32     1  u8  family mask: bit0 i, bit1 j, bit2 k, bit3 l
//!     33     1  u8  norm order (1 or 2)
//!     34     1  u8  section mask: bit0 vocabulary, bit1 training state,
//!                   bit2 optimizer state
//!     35     1  u8  reserved, 0
//!     36    32  f64 × 4 weights w1..w4
//!     68     8  f64 psi
//!     76        vector data, f32: for each enabled family in order i, j, k, l,
//!               the |E|×d entity table then the |R|×d relation table,
//!               index-major
//! ```
//!
//! Optional sections follow in mask order:
//!
//! * vocabulary: u64 count then count × (u32 byte length, UTF-8 bytes) for
//!   entities, then the same for relations;
//! * training state: u64 completed epochs, then f64 γ₁ γ₂ β₁ β₂ ξ threshold
//!   δ δ′;
//! * optimizer state (Adadelta): f64 ρ ε lr, u64 entry count, then per entry
//!   u8 family (0..=3), u8 kind (0 entity, 1 relation), u64 index,
//!   d × f32 `E[g²]`, d × f32 `E[Δx²]`, entries in sorted key order.
//!
//! Vectors are held as `f64` in memory and rounded to `f32` on save.

use std::fs;
use std::path::Path;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::loss::{LossParams, LossState};
use crate::model::{EmbeddingSet, Norm, ParamKind, ScoreConfig, Term};
use crate::optim::{Accumulator, AdadeltaState, ParamKey};

pub const MAGIC: [u8; 8] = *b"MDECKPT\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 76;

const SECTION_VOCAB: u8 = 1;
const SECTION_TRAINING: u8 = 2;
const SECTION_OPTIMIZER: u8 = 4;

/// Controller state and progress saved with a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub epochs_completed: u64,
    pub loss: LossState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub embeddings: EmbeddingSet,
    pub config: ScoreConfig,
    pub vocab: Option<Vocabulary>,
    pub training: Option<TrainingState>,
    pub optimizer: Option<AdadeltaState>,
}

/// Fixed-size header fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u32,
    pub dim: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    pub families: Vec<Term>,
    pub config: ScoreConfig,
    pub has_vocab: bool,
    pub has_training: bool,
    pub has_optimizer: bool,
}

impl Checkpoint {
    pub fn new(embeddings: EmbeddingSet, config: ScoreConfig) -> Self {
        Checkpoint {
            embeddings,
            config,
            vocab: None,
            training: None,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let emb = &self.embeddings;
        let mut w = Writer::default();
        w.bytes(&MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(emb.dim() as u32);
        w.u64(emb.num_entities() as u64);
        w.u64(emb.num_relations() as u64);
        let family_mask = emb.terms().fold(0u8, |m, t| m | (1 << t.slot()));
        w.u8(family_mask);
        w.u8(self.config.norm().order() as u8);
        let mut sections = 0;
        if self.vocab.is_some() {
            sections |= SECTION_VOCAB;
        }
        if self.training.is_some() {
            sections |= SECTION_TRAINING;
        }
        if self.optimizer.is_some() {
            sections |= SECTION_OPTIMIZER;
        }
        w.u8(sections);
        w.u8(0);
        for x in self.config.weights() {
            w.f64(x);
        }
        w.f64(self.config.psi());
        debug_assert_eq!(w.buf.len(), HEADER_LEN);

        for term in emb.terms() {
            for kind in [ParamKind::Entity, ParamKind::Relation] {
                for &x in emb.table_data(term, kind) {
                    w.f32(x as f32);
                }
            }
        }
        if let Some(vocab) = &self.vocab {
            for names in [vocab.entity_names(), vocab.relation_names()] {
                w.u64(names.len() as u64);
                for n in names {
                    w.u32(n.len() as u32);
                    w.bytes(n.as_bytes());
                }
            }
        }
        if let Some(tr) = &self.training {
            let p = tr.loss.params();
            w.u64(tr.epochs_completed);
            for x in [
                p.gamma1,
                p.gamma2,
                p.beta1,
                p.beta2,
                p.xi,
                p.threshold,
                tr.loss.delta(),
                tr.loss.delta_prime(),
            ] {
                w.f64(x);
            }
        }
        if let Some(opt) = &self.optimizer {
            w.f64(opt.rho());
            w.f64(opt.eps());
            w.f64(opt.lr());
            let entries = opt.sorted_accumulators();
            w.u64(entries.len() as u64);
            for (key, acc) in entries {
                w.u8(key.term.slot() as u8);
                w.u8(match key.kind {
                    ParamKind::Entity => 0,
                    ParamKind::Relation => 1,
                });
                w.u64(key.index as u64);
                for &x in acc.sq_grad.iter().chain(&acc.sq_update) {
                    w.f32(x as f32);
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let header = read_header(&mut r)?;
        let term4 = header.families.contains(&Term::Multiplicative);
        let mut emb = EmbeddingSet::zeros(header.num_entities, header.num_relations, header.dim, term4)?;
        for &term in &header.families {
            for kind in [ParamKind::Entity, ParamKind::Relation] {
                for x in emb.table_data_mut(term, kind) {
                    *x = r.f32()? as f64;
                }
            }
        }
        let vocab = if header.has_vocab {
            let mut lists = Vec::with_capacity(2);
            for _ in 0..2 {
                let n = r.u64()? as usize;
                let mut names = Vec::with_capacity(n.min(1 << 20));
                for _ in 0..n {
                    let len = r.u32()? as usize;
                    let raw = r.take(len)?;
                    let s = std::str::from_utf8(raw)
                        .map_err(|_| Error::Checkpoint("vocabulary name is not UTF-8".into()))?;
                    names.push(s.to_owned());
                }
                lists.push(names);
            }
            let relations = lists.pop().unwrap_or_default();
            let entities = lists.pop().unwrap_or_default();
            if entities.len() != header.num_entities || relations.len() != header.num_relations {
                return Err(Error::Checkpoint("vocabulary size disagrees with the header".into()));
            }
            Some(Vocabulary::from_names(entities, relations).map_err(|e| Error::Checkpoint(e.to_string()))?)
        } else {
            None
        };
        let training = if header.has_training {
            let epochs_completed = r.u64()?;
            let mut v = [0.0; 8];
            for x in &mut v {
                *x = r.f64()?;
            }
            let params = LossParams {
                gamma1: v[0],
                gamma2: v[1],
                beta1: v[2],
                beta2: v[3],
                xi: v[4],
                threshold: v[5],
            };
            let loss = LossState::with_shifts(params, v[6], v[7]).map_err(|e| Error::Checkpoint(e.to_string()))?;
            Some(TrainingState {
                epochs_completed,
                loss,
            })
        } else {
            None
        };
        let optimizer = if header.has_optimizer {
            let (rho, eps, lr) = (r.f64()?, r.f64()?, r.f64()?);
            let mut opt = AdadeltaState::new(rho, eps, lr).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let n = r.u64()?;
            for _ in 0..n {
                let slot = r.u8()?;
                let term = Term::ALL
                    .get(slot as usize)
                    .copied()
                    .filter(|t| header.families.contains(t))
                    .ok_or_else(|| Error::Checkpoint(format!("bad optimizer family {slot}")))?;
                let kind = match r.u8()? {
                    0 => ParamKind::Entity,
                    1 => ParamKind::Relation,
                    k => return Err(Error::Checkpoint(format!("bad optimizer kind {k}"))),
                };
                let index = r.u64()? as usize;
                let limit = match kind {
                    ParamKind::Entity => header.num_entities,
                    ParamKind::Relation => header.num_relations,
                };
                if index >= limit {
                    return Err(Error::Checkpoint(format!("optimizer index {index} out of range")));
                }
                let mut read_vec = || -> Result<Vec<f64>> {
                    (0..header.dim).map(|_| r.f32().map(f64::from)).collect()
                };
                let sq_grad = read_vec()?;
                let sq_update = read_vec()?;
                opt.insert_accumulator(ParamKey { term, kind, index }, Accumulator { sq_grad, sq_update });
            }
            Some(opt)
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing byte(s) after the last section",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            embeddings: emb,
            config: header.config,
            vocab,
            training,
            optimizer,
        })
    }

    /// Writes atomically: a temporary file in the same directory is renamed
    /// over `path`, so an interrupted write never replaces a good checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())
            .map_err(|e| Error::io(format!("cannot write {}", tmp.display()), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(format!("cannot write {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Reads only the fixed header of a checkpoint file.
pub fn inspect(path: &Path) -> Result<Header> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
    read_header(&mut Reader { buf: &bytes, pos: 0 })
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn read_header(r: &mut Reader<'_>) -> Result<Header> {
    let magic = r.take(8).map_err(|_| Error::Checkpoint("file too short for a checkpoint header".into()))?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not an MDE checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    let dim = r.u32()? as usize;
    let num_entities = r.u64()? as usize;
    let num_relations = r.u64()? as usize;
    let family_mask = r.u8()?;
    let norm_order = r.u8()?;
    let sections = r.u8()?;
    let _reserved = r.u8()?;
    let mut weights = [0.0; 4];
    for w in &mut weights {
        *w = r.f64()?;
    }
    let psi = r.f64()?;
    if family_mask & 0b0111 != 0b0111 || family_mask & !0b1111 != 0 {
        return Err(Error::Checkpoint(format!("invalid family mask {family_mask:#06b}")));
    }
    if sections & !0b111 != 0 {
        return Err(Error::Checkpoint(format!("unknown section mask {sections:#05b}")));
    }
    let families: Vec<Term> = Term::ALL
        .into_iter()
        .filter(|t| family_mask & (1 << t.slot()) != 0)
        .collect();
    let term4 = families.contains(&Term::Multiplicative);
    let norm = Norm::from_order(norm_order.into()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let config = ScoreConfig::new(weights, psi, norm, term4).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if dim == 0 {
        return Err(Error::Checkpoint("dimension 0".into()));
    }
    Ok(Header {
        version,
        dim,
        num_entities,
        num_relations,
        families,
        config,
        has_vocab: sections & SECTION_VOCAB != 0,
        has_training: sections & SECTION_TRAINING != 0,
        has_optimizer: sections & SECTION_OPTIMIZER != 0,
    })
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::GradientBuffer;
    use proptest::prelude::*;

    fn sample(term4: bool) -> Checkpoint {
        let emb = EmbeddingSet::uniform(3, 2, 4, 11, term4).unwrap();
        let w = if term4 { [0.25, 0.5, 0.25, 0.1] } else { [0.25, 0.5, 0.25, 0.0] };
        let config = ScoreConfig::new(w, 1.2, Norm::L2, term4).unwrap();
        Checkpoint::new(emb, config)
    }

    /// Embeddings rounded through f32, for exact comparisons after a load.
    fn rounded(mut emb: EmbeddingSet) -> EmbeddingSet {
        for term in emb.terms().collect::<Vec<_>>() {
            for kind in [ParamKind::Entity, ParamKind::Relation] {
                for x in emb.table_data_mut(term, kind) {
                    *x = *x as f32 as f64;
                }
            }
        }
        emb
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = sample(false).to_bytes();
        assert_eq!(&bytes[0..8], b"MDECKPT\0");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 2);
        assert_eq!(bytes[32], 0b0111);
        assert_eq!(bytes[33], 2);
        assert_eq!(bytes[34], 0);
        assert_eq!(f64::from_le_bytes(bytes[68..76].try_into().unwrap()), 1.2);
        // 3 families × (3 + 2) vectors × 4 floats × 4 bytes
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 5 * 4 * 4);
        let first = f32::from_le_bytes(bytes[76..80].try_into().unwrap());
        let emb = &sample(false).embeddings;
        assert_eq!(first, emb.entity(Term::Translation, 0)[0] as f32);
        // Relation table of family i follows the entity table.
        let off = HEADER_LEN + 3 * 4 * 4;
        let r0 = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        assert_eq!(r0, emb.relation(Term::Translation, 0)[0] as f32);
    }

    #[test]
    fn round_trip_with_all_sections() {
        let mut ck = sample(true);
        ck.vocab = Some(Vocabulary::from_names(["a", "b", "ç"], ["r", "s"]).unwrap());
        let mut loss = LossState::builder().gamma1(1.9).gamma2(1.9).beta1(2.0).build().unwrap();
        loss.update(0.0, 0.0);
        ck.training = Some(TrainingState {
            epochs_completed: 7,
            loss,
        });
        let mut opt = AdadeltaState::new(0.95, 1e-6, 10.0).unwrap();
        let mut buf = GradientBuffer::new(4);
        buf.add(ParamKey::relation(Term::Multiplicative, 1), 1.0, &[0.5, 0.25, -1.0, 2.0]);
        buf.add(ParamKey::entity(Term::Symmetric, 2), 1.0, &[1.0, 0.5, 0.25, 0.125]);
        let mut emb = ck.embeddings.clone();
        opt.step(&buf, &mut emb).unwrap();
        ck.embeddings = rounded(emb);
        ck.optimizer = Some(opt.clone());

        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.embeddings, ck.embeddings);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.vocab, ck.vocab);
        assert_eq!(back.training, ck.training);
        let back_opt = back.optimizer.unwrap();
        assert_eq!(back_opt.num_tracked(), 2);
        let key = ParamKey::entity(Term::Symmetric, 2);
        let a = back_opt.accumulator(&key).unwrap();
        let b = opt.accumulator(&key).unwrap();
        for (x, y) in a.sq_grad.iter().zip(&b.sq_grad) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }

    #[test]
    fn bad_magic_and_version_are_reported() {
        let mut bytes = sample(false).to_bytes();
        bytes[0] = b'X';
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"));
        let mut bytes = sample(false).to_bytes();
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }

    #[test]
    fn truncation_and_trailing_bytes_are_errors() {
        let bytes = sample(false).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
    }

    #[test]
    fn save_and_inspect_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample(true);
        ck.save(&path).unwrap();
        let header = inspect(&path).unwrap();
        assert_eq!(header.dim, 4);
        assert_eq!(header.families.len(), 4);
        assert!(!header.has_vocab);
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.embeddings, rounded(ck.embeddings));
    }

    proptest! {
        #[test]
        fn load_of_save_is_identity_on_f32_values(seed in any::<u64>(), ne in 1usize..6, nr in 1usize..4, d in 1usize..6, term4 in any::<bool>()) {
            let emb = rounded(EmbeddingSet::uniform(ne, nr, d, seed, term4).unwrap());
            let config = ScoreConfig::new([0.25, 0.5, 0.25, 0.0], 1.2, Norm::L1, term4).unwrap();
            let ck = Checkpoint::new(emb, config);
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back, ck);
        }
    }
}
