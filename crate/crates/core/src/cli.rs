//! The `mde` command line.
//!
//! Subcommands: `train`, `evaluate`, `generate-synthetic`, `fit-ground-truth`
//! and `inspect`. Every training setting is also a `train` flag named after
//! its config key (`batch_size` becomes `--batch-size`); flags given on the
//! command line override values from `--config`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use crate::checkpoint::{inspect, Checkpoint};
use crate::data::{load_triples, FilterIndex, SplitRole, TripleSet, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ReportSide, Setting};
use crate::model::Norm;
use crate::synthetic::{generate_pattern_kg, Pattern, PatternSpec};
use crate::training::{fit_ground_truth, run_training, FitOptions, TrainConfig, CONFIG_KEYS};

const BOOL_KEYS: &[&str] = &["entity_norm", "term4", "filtered_negatives"];
const PATH_KEYS: &[&str] = &["train", "valid", "test", "output"];

fn config_help(key: &str) -> &'static str {
    match key {
        "dim" => "Embedding dimension",
        "batch_size" => "Positive triples per optimizer step",
        "epochs" => "Number of passes over the training set",
        "seed" => "Seed for initialization, shuffling and negative sampling",
        "p" => "Norm order of the distance terms (1 or 2)",
        "weights" => "Term weights w1,w2,w3,w4",
        "psi" => "Offset subtracted from the weighted distance",
        "gamma1" => "Positive limit before shifting",
        "gamma2" => "Negative limit before shifting",
        "beta1" => "Weight of the positive hinge sum",
        "beta2" => "Weight of the negative hinge sum",
        "xi" => "Limit shift step; 0 freezes the limits",
        "threshold" => "Negative loss above which the negative limit is raised",
        "lr" => "Learning rate (multiplier on the Adadelta update)",
        "rho" => "Adadelta decay",
        "eps" => "Adadelta epsilon",
        "optimizer" => "adadelta or sgd",
        "negatives_per_positive" => "Corrupted triples drawn per positive",
        "entity_norm" => "Project entity vectors to unit length after each epoch",
        "term4" => "Enable the fourth (multiplicative) term",
        "filtered_negatives" => "Resample negatives that are training facts",
        "checkpoint_interval" => "Epochs between checkpoints; 0 saves only at the end",
        "threads" => "Worker threads for batch gradients",
        "train" => "Training triples (TSV)",
        "valid" => "Validation triples (TSV)",
        "test" => "Test triples (TSV)",
        "output" => "Directory for the manifest, log and checkpoint",
        _ => "",
    }
}

fn train_command() -> Command {
    let defaults = TrainConfig::default();
    let mut cmd = Command::new("train").about("Train a model from TSV triples").arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("Config file of key = value lines; flags override it"),
    );
    for &key in CONFIG_KEYS {
        let mut arg = Arg::new(key).long(key.replace('_', "-")).help(config_help(key));
        if BOOL_KEYS.contains(&key) {
            arg = arg
                .value_name("BOOL")
                .num_args(0..=1)
                .default_missing_value("true")
                .value_parser(["true", "false"]);
        } else if PATH_KEYS.contains(&key) {
            arg = arg.value_name("PATH");
        } else {
            arg = arg.value_name("VALUE");
        }
        if let Some(v) = defaults.get(key).filter(|v| !v.is_empty()) {
            arg = arg.default_value(v);
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

fn threads_arg() -> Arg {
    Arg::new("threads")
        .long("threads")
        .value_name("N")
        .default_value("1")
        .value_parser(value_parser!(usize))
        .help("Worker threads")
}

/// The full command definition.
pub fn command() -> Command {
    Command::new("mde")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Train and evaluate multi-distance knowledge graph embeddings")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true)
                .help("More log output (repeat for more)"),
        )
        .subcommand(train_command())
        .subcommand(
            Command::new("evaluate")
                .about("Rank test triples against a checkpoint")
                .arg(path_arg("checkpoint", "Checkpoint to evaluate").required(true))
                .arg(path_arg("test", "Test triples (TSV)").required(true))
                .arg(path_arg("train", "Training triples, used only for filtering"))
                .arg(path_arg("valid", "Validation triples, used only for filtering"))
                .arg(
                    Arg::new("setting")
                        .long("setting")
                        .value_name("LIST")
                        .default_value("filtered")
                        .help("Comma-separated settings: raw, filtered"),
                )
                .arg(
                    Arg::new("side")
                        .long("side")
                        .value_name("SIDE")
                        .default_value("both")
                        .value_parser(["head", "tail", "both", "all"])
                        .help("Which ranks to report; `all` reports head, tail and both"),
                )
                .arg(path_arg("report", "Also write the text report here"))
                .arg(path_arg("csv", "Also write CSV rows here"))
                .arg(threads_arg()),
        )
        .subcommand(
            Command::new("generate-synthetic")
                .about("Write a generated pattern dataset")
                .arg(
                    Arg::new("pattern")
                        .long("pattern")
                        .required(true)
                        .value_parser(["symmetry", "antisymmetry", "inversion", "composition"]),
                )
                .arg(
                    Arg::new("entities")
                        .long("entities")
                        .default_value("200")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("relations")
                        .long("relations")
                        .value_parser(value_parser!(usize))
                        .help("Relation count [default: the pattern's group size]"),
                )
                .arg(
                    Arg::new("density")
                        .long("density")
                        .default_value("0.05")
                        .value_parser(value_parser!(f64))
                        .help("Fraction of entity pairs sampled per relation group"),
                )
                .arg(
                    Arg::new("holdout")
                        .long("holdout")
                        .default_value("0.2")
                        .value_parser(value_parser!(f64))
                        .help("Fraction of implied facts held out"),
                )
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64)))
                .arg(path_arg("output", "Output directory").required(true)),
        )
        .subcommand(
            Command::new("fit-ground-truth")
                .about("Fit a pure-translation model to facts against all non-facts")
                .arg(path_arg("facts", "Facts (TSV); omit to draw a random instance"))
                .arg(
                    Arg::new("entities")
                        .long("entities")
                        .value_parser(value_parser!(usize))
                        .help("Entity count [default: from --facts]"),
                )
                .arg(
                    Arg::new("relations")
                        .long("relations")
                        .value_parser(value_parser!(usize))
                        .help("Relation count [default: from --facts]"),
                )
                .arg(
                    Arg::new("random_facts")
                        .long("random-facts")
                        .value_parser(value_parser!(usize))
                        .help("Number of random facts when --facts is omitted"),
                )
                .arg(
                    Arg::new("dim")
                        .long("dim")
                        .value_parser(value_parser!(usize))
                        .help("Embedding dimension [default: facts + 1]"),
                )
                .arg(Arg::new("epochs").long("epochs").default_value("2000").value_parser(value_parser!(usize)))
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64)))
                .arg(Arg::new("p").long("p").default_value("1").value_parser(value_parser!(u32)))
                .arg(Arg::new("lr").long("lr").default_value("10").value_parser(value_parser!(f64)))
                .arg(
                    Arg::new("cap")
                        .long("cap")
                        .default_value("100000")
                        .value_parser(value_parser!(usize))
                        .help("Largest entities²·relations accepted"),
                ),
        )
        .subcommand(
            Command::new("inspect")
                .about("Print a checkpoint header")
                .arg(
                    Arg::new("checkpoint")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                ),
        )
}

fn path_arg(id: &'static str, help: &'static str) -> Arg {
    Arg::new(id)
        .long(id)
        .value_name("PATH")
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    // Fails only if a pool already exists, as in repeated in-process calls.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Resolves the training config: defaults, then `--config`, then flags given
/// explicitly on the command line.
pub fn resolve_train_config(m: &ArgMatches) -> Result<TrainConfig> {
    let mut config = match m.get_one::<PathBuf>("config") {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for &key in CONFIG_KEYS {
        if m.value_source(key) == Some(ValueSource::CommandLine) {
            let v = m.get_one::<String>(key).expect("string-valued flag");
            config.set(key, v)?;
        }
    }
    Ok(config)
}

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let config = resolve_train_config(m)?;
    config.validate()?;
    set_threads(config.threads)?;
    let out = run_training(&config)?;
    let last = out.trainer.history().last().expect("at least one epoch");
    println!("epochs = {}", last.epoch);
    println!("final_loss = {}", last.total);
    println!("delta = {}", last.delta);
    println!("delta_prime = {}", last.delta_prime);
    println!("checkpoint = {}", out.checkpoint.display());
    println!("log = {}", out.log.display());
    println!("manifest = {}", out.manifest.display());
    Ok(())
}

/// Loads triples that must use only names known to `vocab`.
fn load_known(path: &Path, role: SplitRole, vocab: &Vocabulary) -> Result<TripleSet> {
    let (set, grown) = load_triples(path, role, Some(vocab.clone()))?;
    if grown.num_entities() != vocab.num_entities() || grown.num_relations() != vocab.num_relations() {
        let unknown: Vec<&str> = grown.entity_names()[vocab.num_entities()..]
            .iter()
            .chain(&grown.relation_names()[vocab.num_relations()..])
            .take(3)
            .map(String::as_str)
            .collect();
        return Err(Error::Data(format!(
            "vocabulary mismatch: {} names entities or relations unknown to the checkpoint (e.g. {})",
            path.display(),
            unknown.join(", ")
        )));
    }
    Ok(set)
}

fn cmd_evaluate(m: &ArgMatches) -> Result<()> {
    set_threads(*m.get_one::<usize>("threads").unwrap())?;
    let settings = Setting::parse_list(m.get_one::<String>("setting").unwrap())?;
    let sides: &[ReportSide] = match m.get_one::<String>("side").unwrap().as_str() {
        "head" => &[ReportSide::Head],
        "tail" => &[ReportSide::Tail],
        "both" => &[ReportSide::Both],
        _ => &[ReportSide::Head, ReportSide::Tail, ReportSide::Both],
    };
    let ckpt_path = m.get_one::<PathBuf>("checkpoint").unwrap();
    let ckpt = Checkpoint::load(ckpt_path)?;
    let vocab = ckpt.vocab.as_ref().ok_or_else(|| {
        Error::Data(format!("{} carries no vocabulary; cannot map test names", ckpt_path.display()))
    })?;
    let test = load_known(m.get_one::<PathBuf>("test").unwrap(), SplitRole::Test, vocab)?;
    let mut known = vec![test.clone()];
    for (id, role) in [("train", SplitRole::Train), ("valid", SplitRole::Valid)] {
        if let Some(p) = m.get_one::<PathBuf>(id) {
            known.push(load_known(p, role, vocab)?);
        }
    }
    let filter = FilterIndex::from_sets(&known);
    let mut report = evaluate(&test, &ckpt.embeddings, &ckpt.config, Some(&filter), &settings)?;
    report.reports.retain(|r| sides.contains(&r.side));
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = m.get_one::<PathBuf>("report") {
        fs::write(p, &text).map_err(|e| Error::io(format!("cannot write {}", p.display()), e))?;
    }
    if let Some(p) = m.get_one::<PathBuf>("csv") {
        fs::write(p, report.to_csv()).map_err(|e| Error::io(format!("cannot write {}", p.display()), e))?;
    }
    Ok(())
}

fn cmd_generate(m: &ArgMatches) -> Result<()> {
    let pattern: Pattern = m.get_one::<String>("pattern").unwrap().parse()?;
    let spec = PatternSpec::new(
        pattern,
        *m.get_one::<usize>("entities").unwrap(),
        m.get_one::<usize>("relations").copied().unwrap_or(pattern.group_size()),
    )
    .density(*m.get_one::<f64>("density").unwrap())
    .holdout_fraction(*m.get_one::<f64>("holdout").unwrap())
    .seed(*m.get_one::<u64>("seed").unwrap());
    let ds = generate_pattern_kg(&spec)?;
    let out = m.get_one::<PathBuf>("output").unwrap();
    ds.write_to(out)?;
    print!("{}", ds.manifest());
    Ok(())
}

fn cmd_fit(m: &ArgMatches) -> Result<()> {
    let options = FitOptions {
        max_epochs: *m.get_one::<usize>("epochs").unwrap(),
        seed: *m.get_one::<u64>("seed").unwrap(),
        norm: Norm::from_order(*m.get_one::<u32>("p").unwrap())?,
        lr: *m.get_one::<f64>("lr").unwrap(),
        cap: *m.get_one::<usize>("cap").unwrap(),
        ..FitOptions::default()
    };
    let entities = m.get_one::<usize>("entities").copied();
    let relations = m.get_one::<usize>("relations").copied();
    let (facts, ne, nr) = match m.get_one::<PathBuf>("facts") {
        Some(p) => {
            let (facts, vocab) = load_triples(p, SplitRole::Train, None)?;
            let ne = entities.unwrap_or(vocab.num_entities()).max(vocab.num_entities());
            let nr = relations.unwrap_or(vocab.num_relations()).max(vocab.num_relations());
            (facts, ne, nr)
        }
        None => {
            let (Some(ne), Some(nr), Some(k)) = (entities, relations, m.get_one::<usize>("random_facts").copied()) else {
                return Err(Error::Usage(
                    "give --facts, or --entities, --relations and --random-facts".into(),
                ));
            };
            let facts = crate::training::random_facts(ne, nr, k, options.seed)?;
            (facts, ne, nr)
        }
    };
    let dim = m.get_one::<usize>("dim").copied().unwrap_or(facts.len() + 1);
    let r = fit_ground_truth(ne, nr, &facts, dim, &options)?;
    println!("entities = {ne}");
    println!("relations = {nr}");
    println!("dim = {dim}");
    println!("facts = {}", r.n_facts);
    println!("non_facts = {}", r.n_non_facts);
    println!("epochs = {}", r.epochs);
    println!("max_fact_score = {}", r.max_fact_score);
    println!("min_non_fact_score = {}", r.min_non_fact_score);
    match r.threshold {
        Some(t) => println!("threshold = {t}"),
        None => println!("threshold = none"),
    }
    println!("separated = {}", r.separated);
    Ok(())
}

fn cmd_inspect(m: &ArgMatches) -> Result<()> {
    let h = inspect(m.get_one::<PathBuf>("checkpoint").unwrap())?;
    let families: String = h.families.iter().map(|t| t.family()).collect();
    println!("format_version = {}", h.version);
    println!("dim = {}", h.dim);
    println!("entities = {}", h.num_entities);
    println!("relations = {}", h.num_relations);
    println!("families = {families}");
    println!("p = {}", h.config.norm().order());
    println!("weights = {}", h.config.weights().map(|w| w.to_string()).join(","));
    println!("psi = {}", h.config.psi());
    println!("vocabulary = {}", h.has_vocab);
    println!("training_state = {}", h.has_training);
    println!("optimizer_state = {}", h.has_optimizer);
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(matches.get_count("verbose"));
    let result = match matches.subcommand() {
        Some(("train", m)) => cmd_train(m),
        Some(("evaluate", m)) => cmd_evaluate(m),
        Some(("generate-synthetic", m)) => cmd_generate(m),
        Some(("fit-ground-truth", m)) => cmd_fit(m),
        Some(("inspect", m)) => cmd_inspect(m),
        _ => unreachable!("subcommand is required"),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn help_defaults_match_config_defaults() {
        let help = train_command().render_long_help().to_string();
        let defaults = TrainConfig::default();
        for &key in CONFIG_KEYS {
            let flag = format!("--{}", key.replace('_', "-"));
            assert!(help.contains(&flag), "{flag} missing");
            if let Some(v) = defaults.get(key).filter(|v| !v.is_empty()) {
                assert!(help.contains(&format!("[default: {v}]")), "{key} default {v} missing");
            }
        }
    }

    fn train_matches(args: &[&str]) -> ArgMatches {
        let m = command().try_get_matches_from(args).unwrap();
        m.subcommand_matches("train").unwrap().clone()
    }

    #[test]
    fn flags_override_config_file_only_when_given() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        fs::write(&cfg, "dim = 20\nepochs = 7\nterm4 = true\n").unwrap();
        let c = cfg.to_str().unwrap();
        let resolved = resolve_train_config(&train_matches(&["mde", "train", "--config", c, "--epochs", "3"])).unwrap();
        assert_eq!((resolved.dim, resolved.epochs, resolved.term4), (20, 3, true));
        let resolved = resolve_train_config(&train_matches(&["mde", "train", "--term4=false", "--config", c])).unwrap();
        assert!(!resolved.term4);
        let resolved = resolve_train_config(&train_matches(&["mde", "train", "--entity-norm"])).unwrap();
        assert!(resolved.entity_norm);
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        assert_eq!(run(["mde", "train", "--learning-rate", "3"]), 1);
        assert_eq!(run(["mde", "frobnicate"]), 1);
    }
}
