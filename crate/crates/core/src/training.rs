//! Negative sampling, the epoch loop, run configuration and run artifacts.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, TrainingState};
use crate::data::{load_triples, SplitRole, Triple, TripleSet, Vocabulary};
use crate::error::{Error, Result};
use crate::loss::{LossParams, LossState, LossValue};
use crate::model::{check_limit_consistency, score_mde, EmbeddingSet, Norm, ScoreConfig};
use crate::optim::{loss_and_grad, AdadeltaState, GradientBuffer, Optimizer, DEFAULT_EPS, DEFAULT_RHO};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adadelta,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adadelta" => Ok(OptimizerKind::Adadelta),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (expected adadelta or sgd)"))),
        }
    }
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

/// Every knob of a training run.
///
/// The flat text form (`key = value` per line, `#` comments) uses the field
/// names below, except `weights`, written as four comma-separated numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub p: u32,
    pub weights: [f64; 4],
    pub psi: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub xi: f64,
    pub threshold: f64,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub optimizer: OptimizerKind,
    pub negatives_per_positive: usize,
    pub entity_norm: bool,
    pub term4: bool,
    pub filtered_negatives: bool,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_interval: usize,
    pub threads: usize,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossParams::default();
        let score = ScoreConfig::default();
        TrainConfig {
            dim: 50,
            batch_size: 100,
            epochs: 1000,
            seed: 0,
            p: score.norm().order(),
            weights: score.weights(),
            psi: score.psi(),
            gamma1: loss.gamma1,
            gamma2: loss.gamma2,
            beta1: loss.beta1,
            beta2: loss.beta2,
            xi: loss.xi,
            threshold: loss.threshold,
            lr: 10.0,
            rho: DEFAULT_RHO,
            eps: DEFAULT_EPS,
            optimizer: OptimizerKind::Adadelta,
            negatives_per_positive: 1,
            entity_norm: false,
            term4: false,
            filtered_negatives: false,
            checkpoint_interval: 100,
            threads: 1,
            train: None,
            valid: None,
            test: None,
            output: None,
        }
    }
}

/// Names accepted in config files, in the order they are written.
pub const CONFIG_KEYS: &[&str] = &[
    "dim",
    "batch_size",
    "epochs",
    "seed",
    "p",
    "weights",
    "psi",
    "gamma1",
    "gamma2",
    "beta1",
    "beta2",
    "xi",
    "threshold",
    "lr",
    "rho",
    "eps",
    "optimizer",
    "negatives_per_positive",
    "entity_norm",
    "term4",
    "filtered_negatives",
    "checkpoint_interval",
    "threads",
    "train",
    "valid",
    "test",
    "output",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

pub fn parse_weights(value: &str) -> Result<[f64; 4]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::Config(format!("weights: expected 4 comma-separated numbers, got {value:?}")));
    }
    let mut w = [0.0; 4];
    for (w, s) in w.iter_mut().zip(parts) {
        *w = parse_value("weights", s)?;
    }
    Ok(w)
}

fn path_or_none(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl TrainConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dim" => self.dim = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "p" => self.p = parse_value(key, v)?,
            "weights" => self.weights = parse_weights(v)?,
            "psi" => self.psi = parse_value(key, v)?,
            "gamma1" => self.gamma1 = parse_value(key, v)?,
            "gamma2" => self.gamma2 = parse_value(key, v)?,
            "beta1" => self.beta1 = parse_value(key, v)?,
            "beta2" => self.beta2 = parse_value(key, v)?,
            "xi" => self.xi = parse_value(key, v)?,
            "threshold" => self.threshold = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "rho" => self.rho = parse_value(key, v)?,
            "eps" => self.eps = parse_value(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "negatives_per_positive" => self.negatives_per_positive = parse_value(key, v)?,
            "entity_norm" => self.entity_norm = parse_bool(key, v)?,
            "term4" => self.term4 = parse_bool(key, v)?,
            "filtered_negatives" => self.filtered_negatives = parse_bool(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse_value(key, v)?,
            "threads" => self.threads = parse_value(key, v)?,
            "train" => self.train = path_or_none(v),
            "valid" => self.valid = path_or_none(v),
            "test" => self.test = path_or_none(v),
            "output" => self.output = path_or_none(v),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Textual value of one field, as accepted by [`TrainConfig::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "dim" => self.dim.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "p" => self.p.to_string(),
            "weights" => self.weights.map(|w| w.to_string()).join(","),
            "psi" => self.psi.to_string(),
            "gamma1" => self.gamma1.to_string(),
            "gamma2" => self.gamma2.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "xi" => self.xi.to_string(),
            "threshold" => self.threshold.to_string(),
            "lr" => self.lr.to_string(),
            "rho" => self.rho.to_string(),
            "eps" => self.eps.to_string(),
            "optimizer" => self.optimizer.name().to_owned(),
            "negatives_per_positive" => self.negatives_per_positive.to_string(),
            "entity_norm" => self.entity_norm.to_string(),
            "term4" => self.term4.to_string(),
            "filtered_negatives" => self.filtered_negatives.to_string(),
            "checkpoint_interval" => self.checkpoint_interval.to_string(),
            "threads" => self.threads.to_string(),
            "train" => path(&self.train),
            "valid" => path(&self.valid),
            "test" => path(&self.test),
            "output" => path(&self.output),
            _ => return None,
        })
    }

    /// Applies `key = value` lines over the current values.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}:{}: {m}", origin.display(), i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text, Path::new("<config>"))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        let mut c = TrainConfig::default();
        c.apply_text(&text, path)?;
        Ok(c)
    }

    /// Every field as `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).unwrap_or_default());
        }
        s
    }

    pub fn norm(&self) -> Result<Norm> {
        Norm::from_order(self.p)
    }

    pub fn score_config(&self) -> Result<ScoreConfig> {
        ScoreConfig::new(self.weights, self.psi, self.norm()?, self.term4)
    }

    pub fn loss_state(&self) -> Result<LossState> {
        LossState::builder()
            .gamma1(self.gamma1)
            .gamma2(self.gamma2)
            .beta1(self.beta1)
            .beta2(self.beta2)
            .xi(self.xi)
            .threshold(self.threshold)
            .build()
    }

    pub fn make_optimizer(&self) -> Result<Optimizer> {
        match self.optimizer {
            OptimizerKind::Adadelta => Ok(Optimizer::Adadelta(AdadeltaState::new(self.rho, self.eps, self.lr)?)),
            OptimizerKind::Sgd => {
                if !(self.lr > 0.0 && self.lr.is_finite()) {
                    return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
                }
                Ok(Optimizer::Sgd { lr: self.lr })
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.score_config()?;
        self.loss_state()?;
        self.make_optimizer()?;
        Ok(())
    }
}

/// Replaces the head or the tail (each with probability ½) by a different
/// entity drawn uniformly.
pub fn sample_negative<R: Rng + ?Sized>(t: &Triple, num_entities: usize, rng: &mut R) -> Result<Triple> {
    if num_entities < 2 {
        return Err(Error::Config(format!(
            "cannot corrupt triples with {num_entities} entit{}",
            if num_entities == 1 { "y" } else { "ies" }
        )));
    }
    let corrupt_head = rng.gen_bool(0.5);
    let original = if corrupt_head { t.head } else { t.tail };
    let mut e = rng.gen_range(0..num_entities - 1);
    if e >= original {
        e += 1;
    }
    Ok(if corrupt_head {
        Triple::new(e, t.relation, t.tail)
    } else {
        Triple::new(t.head, t.relation, e)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_pos: f64,
    pub loss_neg: f64,
    pub total: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    records: Vec<EpochRecord>,
}

pub const LOG_HEADER: &str = "epoch,loss_pos,loss_neg,total,delta,delta_prime,wall_seconds";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6}",
            self.epoch, self.loss_pos, self.loss_neg, self.total, self.delta, self.delta_prime, self.wall_seconds
        )
    }
}

impl TrainHistory {
    /// Appends a record; epochs must be strictly increasing.
    pub fn push(&mut self, record: EpochRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.epoch > last.epoch, "epoch numbers must increase");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Training splits sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub vocab: Vocabulary,
    pub train: TripleSet,
    pub valid: TripleSet,
    pub test: TripleSet,
}

impl TrainData {
    pub fn new(vocab: Vocabulary, train: TripleSet) -> Self {
        TrainData {
            vocab,
            train,
            valid: TripleSet::empty(SplitRole::Valid),
            test: TripleSet::empty(SplitRole::Test),
        }
    }

    /// Loads the training file, then valid and test files if given, growing
    /// one vocabulary in that order.
    pub fn load(train: &Path, valid: Option<&Path>, test: Option<&Path>) -> Result<Self> {
        let (train, vocab) = load_triples(train, SplitRole::Train, None)?;
        let mut data = TrainData::new(vocab, train);
        if let Some(p) = valid {
            let (set, vocab) = load_triples(p, SplitRole::Valid, Some(data.vocab))?;
            data.valid = set;
            data.vocab = vocab;
        }
        if let Some(p) = test {
            let (set, vocab) = load_triples(p, SplitRole::Test, Some(data.vocab))?;
            data.test = set;
            data.vocab = vocab;
        }
        Ok(data)
    }
}

/// The epoch loop and all state it owns.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    score: ScoreConfig,
    loss: LossState,
    optimizer: Optimizer,
    embeddings: EmbeddingSet,
    num_entities: usize,
    order: Vec<Triple>,
    known: Option<HashSet<Triple>>,
    rng: ChaCha8Rng,
    history: TrainHistory,
    epochs_done: usize,
}

const FILTER_RETRIES: usize = 100;

impl Trainer {
    /// Initializes embeddings from `config.seed` and checks the config.
    pub fn new(config: TrainConfig, num_entities: usize, num_relations: usize, train: &TripleSet) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if let Some(t) = train.iter().find(|t| t.head >= num_entities || t.tail >= num_entities || t.relation >= num_relations) {
            return Err(Error::Data(format!("training triple {t} is outside the vocabulary")));
        }
        if num_entities < 2 {
            return Err(Error::Config("training needs at least 2 entities to sample negatives".into()));
        }
        let score = config.score_config()?;
        let loss = config.loss_state()?;
        // Advisory only; inconsistencies are logged.
        check_limit_consistency(&score, &loss, None);
        let embeddings = EmbeddingSet::uniform(num_entities, num_relations, config.dim, config.seed, config.term4)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // Stream 0 seeds the initializer; training draws from its own stream.
        rng.set_stream(1);
        let known = config.filtered_negatives.then(|| train.iter().copied().collect());
        Ok(Trainer {
            optimizer: config.make_optimizer()?,
            config,
            score,
            loss,
            embeddings,
            num_entities,
            order: train.triples().to_vec(),
            known,
            rng,
            history: TrainHistory::default(),
            epochs_done: 0,
        })
    }

    pub fn from_data(config: TrainConfig, data: &TrainData) -> Result<Self> {
        Self::new(config, data.vocab.num_entities(), data.vocab.num_relations(), &data.train)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn score_config(&self) -> &ScoreConfig {
        &self.score
    }

    pub fn loss_state(&self) -> &LossState {
        &self.loss
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn into_parts(self) -> (EmbeddingSet, TrainHistory) {
        (self.embeddings, self.history)
    }

    fn negative_for(&mut self, t: &Triple) -> Result<Triple> {
        let mut neg = sample_negative(t, self.num_entities, &mut self.rng)?;
        if let Some(known) = &self.known {
            for _ in 0..FILTER_RETRIES {
                if !known.contains(&neg) {
                    break;
                }
                neg = sample_negative(t, self.num_entities, &mut self.rng)?;
            }
        }
        Ok(neg)
    }

    fn batch_gradient(&self, positives: &[Triple], negatives: &[Triple]) -> (LossValue, GradientBuffer) {
        let threads = self.config.threads;
        if threads <= 1 || positives.len() < 2 {
            return loss_and_grad(positives, negatives, &self.embeddings, &self.score, &self.loss);
        }
        // Negatives for positive i are at i·k..(i+1)·k.
        let k = self.config.negatives_per_positive;
        let chunk = positives.len().div_ceil(threads);
        let parts: Vec<_> = positives
            .par_chunks(chunk)
            .enumerate()
            .map(|(c, pos)| {
                let start = c * chunk * k;
                let neg = &negatives[start..start + pos.len() * k];
                loss_and_grad(pos, neg, &self.embeddings, &self.score, &self.loss)
            })
            .collect();
        let mut value = LossValue::default();
        let mut grads = GradientBuffer::new(self.embeddings.dim());
        for (v, g) in parts {
            value += v;
            grads.merge(g);
        }
        (value, grads)
    }

    fn epoch_inner(&mut self) -> Result<LossValue> {
        let mut order = std::mem::take(&mut self.order);
        order.shuffle(&mut self.rng);
        let k = self.config.negatives_per_positive;
        let mut total = LossValue::default();
        let mut negatives = Vec::with_capacity(self.config.batch_size * k);
        let result = (|| {
            for batch in order.chunks(self.config.batch_size) {
                negatives.clear();
                for t in batch {
                    for _ in 0..k {
                        let n = self.negative_for(t)?;
                        negatives.push(n);
                    }
                }
                let (value, grads) = self.batch_gradient(batch, &negatives);
                if !value.total.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss in epoch {}",
                        self.epochs_done + 1
                    )));
                }
                self.optimizer.step(&grads, &mut self.embeddings)?;
                total += value;
            }
            Ok(())
        })();
        self.order = order;
        result.map(|()| total)
    }

    /// Runs one epoch. On failure the model is restored to the end of the
    /// previous epoch and the error returned.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let saved = (self.embeddings.clone(), self.optimizer.clone());
        let outcome = self.epoch_inner().and_then(|v| {
            if self.embeddings.all_finite() {
                Ok(v)
            } else {
                Err(Error::Numerical(format!("non-finite embeddings after epoch {}", self.epochs_done + 1)))
            }
        });
        let value = match outcome {
            Ok(v) => v,
            Err(e) => {
                (self.embeddings, self.optimizer) = saved;
                return Err(e);
            }
        };
        self.loss.update(value.pos, value.neg);
        if self.config.entity_norm {
            self.embeddings.normalize_entities();
        }
        self.epochs_done += 1;
        let record = EpochRecord {
            epoch: self.epochs_done,
            loss_pos: value.pos,
            loss_neg: value.neg,
            total: value.total,
            delta: self.loss.delta(),
            delta_prime: self.loss.delta_prime(),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        self.history.push(record);
        Ok(record)
    }

    /// Snapshot of the model with controller and optimizer state.
    pub fn checkpoint(&self, vocab: Option<&Vocabulary>) -> Checkpoint {
        let mut ckpt = Checkpoint::new(self.embeddings.clone(), self.score.clone());
        ckpt.vocab = vocab.cloned();
        ckpt.training = Some(TrainingState {
            epochs_completed: self.epochs_done as u64,
            loss: self.loss.clone(),
        });
        if let Optimizer::Adadelta(state) = &self.optimizer {
            ckpt.optimizer = Some(state.clone());
        }
        ckpt
    }
}

/// Trains in memory for `config.epochs` epochs.
pub fn train(config: &TrainConfig, data: &TrainData) -> Result<(EmbeddingSet, TrainHistory)> {
    let mut trainer = Trainer::from_data(config.clone(), data)?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.into_parts())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Run manifest: provenance as `#` comments, then the resolved config, so the
/// manifest itself is a loadable config file.
pub fn manifest_text(config: &TrainConfig) -> Result<String> {
    let mut s = String::from("# run manifest\n");
    let _ = writeln!(s, "# code_version: {CODE_VERSION}");
    for (key, path) in [("train", &config.train), ("valid", &config.valid), ("test", &config.test)] {
        if let Some(p) = path {
            let _ = writeln!(s, "# sha256 {key}: {}", sha256_file(p)?);
        }
    }
    s.push_str(&config.to_text());
    Ok(s)
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// What a completed file-backed run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub trainer: Trainer,
    pub vocab: Vocabulary,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub manifest: PathBuf,
}

/// Trains from the files named in `config`, writing the manifest, a CSV log
/// and checkpoints under `config.output`.
///
/// If an epoch fails, the checkpoint holds the last completed epoch.
pub fn run_training(config: &TrainConfig) -> Result<RunOutcome> {
    config.validate()?;
    let train_path = config
        .train
        .as_deref()
        .ok_or_else(|| Error::Usage("no training file given".into()))?;
    let out = config
        .output
        .as_deref()
        .ok_or_else(|| Error::Usage("no output directory given".into()))?;
    let data = TrainData::load(train_path, config.valid.as_deref(), config.test.as_deref())?;
    fs::create_dir_all(out).map_err(|e| Error::io(format!("cannot create {}", out.display()), e))?;

    let manifest = out.join(MANIFEST_FILE);
    fs::write(&manifest, manifest_text(config)?)
        .map_err(|e| Error::io(format!("cannot write {}", manifest.display()), e))?;

    let log_path = out.join(LOG_FILE);
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(format!("cannot create {}", log_path.display()), e))?;
    let log_err = |e| Error::io(format!("cannot write {}", log_path.display()), e);
    writeln!(log_file, "{LOG_HEADER}").map_err(log_err)?;

    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut trainer = Trainer::from_data(config.clone(), &data)?;
    log::info!(
        "training on {} triples, {} entities, {} relations",
        data.train.len(),
        data.vocab.num_entities(),
        data.vocab.num_relations()
    );
    for _ in 0..config.epochs {
        let record = match trainer.run_epoch() {
            Ok(r) => r,
            Err(e) => {
                trainer.checkpoint(Some(&data.vocab)).save(&ckpt_path)?;
                return Err(e);
            }
        };
        writeln!(log_file, "{}", record.csv_row()).map_err(log_err)?;
        log::debug!("epoch {} total {:.6}", record.epoch, record.total);
        if config.checkpoint_interval > 0 && record.epoch % config.checkpoint_interval == 0 {
            trainer.checkpoint(Some(&data.vocab)).save(&ckpt_path)?;
        }
    }
    trainer.checkpoint(Some(&data.vocab)).save(&ckpt_path)?;
    Ok(RunOutcome {
        trainer,
        vocab: data.vocab,
        checkpoint: ckpt_path,
        log: log_path,
        manifest,
    })
}

/// Settings for [`fit_ground_truth`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_epochs: usize,
    pub seed: u64,
    pub norm: Norm,
    pub lr: f64,
    /// Largest `|E|²·|R|` the exhaustive enumeration accepts.
    pub cap: usize,
    /// Smallest gap between the worst fact and the best non-fact that counts
    /// as separation. Guards against ties broken only by rounding.
    pub min_gap: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_epochs: 2000,
            seed: 0,
            norm: Norm::L1,
            lr: 10.0,
            cap: 100_000,
            min_gap: 1e-6,
        }
    }
}

/// `count` distinct facts drawn uniformly from all `|E|²·|R|` triples.
pub fn random_facts(num_entities: usize, num_relations: usize, count: usize, seed: u64) -> Result<TripleSet> {
    let universe = num_entities * num_entities * num_relations;
    if count > universe {
        return Err(Error::Config(format!("cannot draw {count} distinct facts from {universe} triples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples = rand::seq::index::sample(&mut rng, universe, count).into_iter().map(|i| {
        let (h, rest) = (i / (num_relations * num_entities), i % (num_relations * num_entities));
        Triple::new(h, rest / num_entities, rest % num_entities)
    });
    Ok(TripleSet::from_triples(triples, SplitRole::Train).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub separated: bool,
    pub epochs: usize,
    pub n_facts: usize,
    pub n_non_facts: usize,
    /// Largest fact score; `-inf` without facts.
    pub max_fact_score: f64,
    /// Smallest non-fact score; `+inf` without non-facts.
    pub min_non_fact_score: f64,
    /// A separating threshold when one exists.
    pub threshold: Option<f64>,
}

fn separation(facts: &[Triple], non_facts: &[Triple], emb: &EmbeddingSet, c: &ScoreConfig) -> (f64, f64) {
    let max_f = facts.iter().map(|t| score_mde(t, emb, c)).fold(f64::NEG_INFINITY, f64::max);
    let min_n = non_facts.iter().map(|t| score_mde(t, emb, c)).fold(f64::INFINITY, f64::min);
    (max_f, min_n)
}

/// Fits a pure-translation model to `facts`, treating every other triple
/// over the vocabulary as a negative, and reports whether some score
/// threshold separates facts from non-facts.
///
/// Full-batch training with limits `1` and `2` and a frozen controller;
/// stops as soon as the scores separate.
pub fn fit_ground_truth(
    num_entities: usize,
    num_relations: usize,
    facts: &TripleSet,
    dim: usize,
    options: &FitOptions,
) -> Result<SeparationReport> {
    let universe = num_entities
        .checked_mul(num_entities)
        .and_then(|n| n.checked_mul(num_relations))
        .unwrap_or(usize::MAX);
    if universe > options.cap {
        return Err(Error::Config(format!(
            "instance has {universe} possible triples, above the exhaustive cap of {}",
            options.cap
        )));
    }
    if let Some(t) = facts.iter().find(|t| t.head >= num_entities || t.tail >= num_entities || t.relation >= num_relations) {
        return Err(Error::Data(format!("fact {t} is outside the vocabulary")));
    }
    let fact_set: HashSet<Triple> = facts.iter().copied().collect();
    let mut non_facts = Vec::with_capacity(universe - fact_set.len());
    for h in 0..num_entities {
        for r in 0..num_relations {
            for t in 0..num_entities {
                let tr = Triple::new(h, r, t);
                if !fact_set.contains(&tr) {
                    non_facts.push(tr);
                }
            }
        }
    }
    let mut report = SeparationReport {
        separated: true,
        epochs: 0,
        n_facts: facts.len(),
        n_non_facts: non_facts.len(),
        max_fact_score: f64::NEG_INFINITY,
        min_non_fact_score: f64::INFINITY,
        threshold: None,
    };
    if facts.is_empty() || non_facts.is_empty() {
        return Ok(report);
    }

    let config = ScoreConfig::transe(options.norm);
    let state = LossState::builder().gamma1(1.0).gamma2(2.0).xi(0.0).build()?;
    let mut emb = EmbeddingSet::uniform(num_entities, num_relations, dim, options.seed, false)?;
    let mut opt = AdadeltaState::new(DEFAULT_RHO, DEFAULT_EPS, options.lr)?;
    let positives = facts.triples();
    let check = |emb: &EmbeddingSet| separation(positives, &non_facts, emb, &config);
    let separated = |max_f: f64, min_n: f64| min_n - max_f > options.min_gap;
    let (mut max_f, mut min_n) = check(&emb);
    while !separated(max_f, min_n) && report.epochs < options.max_epochs {
        let (value, grads) = loss_and_grad(positives, &non_facts, &emb, &config, &state);
        if !value.total.is_finite() {
            return Err(Error::Numerical("non-finite loss while fitting".into()));
        }
        if grads.is_empty() {
            // Loss is zero; nothing more to learn.
            break;
        }
        opt.step(&grads, &mut emb)?;
        report.epochs += 1;
        (max_f, min_n) = check(&emb);
    }
    report.max_fact_score = max_f;
    report.min_non_fact_score = min_n;
    report.separated = separated(max_f, min_n);
    report.threshold = report.separated.then_some(0.5 * (max_f + min_n));
    Ok(report)
}
