//! Command-line front end: `train`, `predict`, `evaluate`, `compare`,
//! `redact` and `generate`.
//!
//! Settings are layered: built-in defaults, then the `--config` file, then
//! each `--set KEY=VALUE`, then `--seed`. Exit codes are 0 on success, 2 for
//! usage and configuration errors (including unreadable checkpoints), 3 for
//! data errors and 4 for internal invariant violations.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn, LevelFilter};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::standoff::{align, list_ids, load_dir, parse_annotations, write_standoff};
use crate::corpus::{
    build_vocab, generate_synthetic_corpus, load_pretrained, split_train_valid, Document,
    EntitySpan,
};
use crate::error::Error;
use crate::evaluation::{evaluate, f1_randomization, EvalMode};
use crate::model::{parse_pairs, CediConfig, CediModel};
use crate::training::{evaluate_model, format_log, train_logged};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// Keys of a run configuration file beyond the model hyperparameters.
pub const PATH_KEYS: [&str; 6] = [
    "train_dir",
    "valid_dir",
    "test_dir",
    "embeddings_path",
    "checkpoint_path",
    "output_dir",
];

/// A failed command: exit code and message for stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Compatibility(_) => EXIT_USAGE,
            Error::Domain(_)
            | Error::Format { .. }
            | Error::Annotation(_)
            | Error::Integrity(_)
            | Error::Io { .. } => EXIT_DATA,
            Error::Dimension { .. } | Error::Index { .. } | Error::State(_) => EXIT_INTERNAL,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Hyperparameters plus the corpus and artifact paths of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: CediConfig,
    pub train_dir: Option<PathBuf>,
    pub valid_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub embeddings_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Assign one key, hyperparameter or path. Unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> crate::Result<()> {
        let slot = match key {
            "train_dir" => &mut self.train_dir,
            "valid_dir" => &mut self.valid_dir,
            "test_dir" => &mut self.test_dir,
            "embeddings_path" => &mut self.embeddings_path,
            "checkpoint_path" => &mut self.checkpoint_path,
            "output_dir" => &mut self.output_dir,
            _ => {
                return if self.model.apply(key, value)? {
                    Ok(())
                } else {
                    Err(Error::Config(format!("unknown configuration key {key:?}")))
                };
            }
        };
        let value = value.trim();
        *slot = (!value.is_empty()).then(|| PathBuf::from(value));
        Ok(())
    }

    /// Parse a `key = value` file body. Each key may appear once.
    pub fn from_text(text: &str) -> crate::Result<Self> {
        let mut config = RunConfig::default();
        for (key, value) in parse_pairs(text)? {
            config.apply(&key, &value)?;
        }
        Ok(config)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cedi",
    version,
    about = "Context-embedding PII tagger and redaction toolkit"
)]
struct Cli {
    /// Run configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint and its training log.
    Train(TrainArgs),
    /// Write predicted `.ann` files for every `.txt` in a directory.
    Predict(ApplyArgs),
    /// Score predicted annotations against gold annotations.
    Evaluate(EvaluateArgs),
    /// Approximate randomization test between two systems.
    Compare(CompareArgs),
    /// Write copies of every `.txt` with predicted spans replaced.
    Redact(RedactArgs),
    /// Write a synthetic annotated corpus.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory of annotated training notes
    #[arg(long)]
    train_dir: Option<PathBuf>,
    /// Validation notes for early stopping; a third of train_dir if unset
    #[arg(long)]
    valid_dir: Option<PathBuf>,
    /// Held-out notes scored once with the best checkpoint
    #[arg(long)]
    test_dir: Option<PathBuf>,
    /// Pretrained token vectors in word2vec text format
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Where to write the best checkpoint; the log goes to <checkpoint>.log
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    checkpoint: PathBuf,
    input: PathBuf,
    /// Defaults to `output_dir` from the configuration.
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Entity,
    Token,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Entity => EvalMode::Entity,
            ModeArg::Token => EvalMode::Token,
        }
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    gold: PathBuf,
    pred: PathBuf,
    #[arg(long, value_enum, default_value = "entity")]
    mode: ModeArg,
    /// Tab-separated `label P R F1 support` lines.
    #[arg(long)]
    machine: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    gold: PathBuf,
    pred_a: PathBuf,
    pred_b: PathBuf,
    #[arg(long, default_value_t = 9999)]
    shuffles: usize,
    #[arg(long, value_enum, default_value = "entity")]
    mode: ModeArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RedactStyle {
    /// `[**LABEL**]`
    Placeholder,
    /// A `#` run as long as the span.
    Mask,
}

#[derive(Debug, Args)]
struct RedactArgs {
    checkpoint: PathBuf,
    input: PathBuf,
    /// Defaults to `output_dir` from the configuration.
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "placeholder")]
    style: RedactStyle,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    output: PathBuf,
    #[arg(long, default_value_t = 100)]
    docs: usize,
    /// Write `train`, `valid` and `test` subdirectories of these sizes
    /// instead of one flat directory, e.g. `300,100,100`.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<usize>>,
}

fn init_logging(quiet: bool) {
    let _ = env_logger::Builder::new()
        .filter_level(LevelFilter::Info)
        .format_timestamp(None)
        .parse_default_env()
        .try_init();
    log::set_max_level(if quiet {
        LevelFilter::Warn
    } else {
        LevelFilter::Info
    });
}

/// Parse `args` (program name first), run the command and return the exit
/// code. Reports go to `out`; diagnostics go to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.quiet);
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn load_run_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            RunConfig::from_text(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        config
            .apply(key.trim(), value)
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    if let Some(seed) = cli.seed {
        config.model.seed = seed;
    }
    config
        .model
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(config)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult {
    let config = load_run_config(&cli)?;
    match cli.command {
        Command::Train(args) => cmd_train(config, args, out),
        Command::Predict(args) => {
            let output = output_dir(args.output, &config)?;
            cmd_predict(&args.checkpoint, &args.input, &output)
        }
        Command::Evaluate(args) => cmd_evaluate(&args, out),
        Command::Compare(args) => cmd_compare(&args, config.model.seed, out),
        Command::Redact(args) => {
            let output = output_dir(args.output, &config)?;
            cmd_redact(&args.checkpoint, &args.input, &output, args.style)
        }
        Command::Generate(args) => cmd_generate(&args, config.model.seed),
    }
}

fn output_dir(arg: Option<PathBuf>, config: &RunConfig) -> CliResult<PathBuf> {
    arg.or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::usage("no output directory given and output_dir is not set"))
}

fn load_corpus(dir: &Path) -> CliResult<Vec<Document>> {
    let loaded = load_dir(dir)?;
    let mut docs = Vec::with_capacity(loaded.len());
    for s in loaded {
        for w in &s.warnings {
            warn!(
                "{}: annotation {} snapped from {:?} to {:?}",
                s.document.id, w.annotation, w.original, w.snapped
            );
        }
        docs.push(s.document);
    }
    if docs.is_empty() {
        return Err(CliError::data(format!(
            "{}: no .txt documents",
            dir.display()
        )));
    }
    Ok(docs)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| CliError::usage(format!("{key} is not set")))
}

/// Training log path: the checkpoint path with `.log` appended.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".log");
    PathBuf::from(name)
}

fn cmd_train(mut config: RunConfig, args: TrainArgs, out: &mut dyn Write) -> CliResult {
    let overrides = [
        (&mut config.train_dir, args.train_dir),
        (&mut config.valid_dir, args.valid_dir),
        (&mut config.test_dir, args.test_dir),
        (&mut config.embeddings_path, args.embeddings),
        (&mut config.checkpoint_path, args.checkpoint),
    ];
    for (slot, value) in overrides {
        if value.is_some() {
            *slot = value;
        }
    }
    let checkpoint = required(&config.checkpoint_path, "checkpoint_path")?.clone();
    let all = load_corpus(required(&config.train_dir, "train_dir")?)?;
    let (train_docs, valid_docs) = match &config.valid_dir {
        Some(dir) => (all, load_corpus(dir)?),
        None => {
            info!("no valid_dir; holding out a third of the training documents");
            split_train_valid(&all, config.model.seed)?
        }
    };
    let m = &config.model;
    let vocab = build_vocab(
        &train_docs,
        m.prefix_threshold,
        m.affix_length,
        m.tag_scheme,
    )?;
    let pretrained = match &config.embeddings_path {
        Some(path) => {
            let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
            rng.set_stream(u64::MAX);
            let p = load_pretrained(path, &vocab.tokens, m.token_dim, &mut rng)?;
            info!("pretrained coverage {:.1}%", 100.0 * p.coverage);
            Some(p.table)
        }
        None => None,
    };
    let model = CediModel::build(config.model.clone(), vocab, pretrained.as_ref())?;
    info!(
        "training on {} documents, validating on {}",
        train_docs.len(),
        valid_docs.len()
    );
    let (best, state) = train_logged(model, &train_docs, &valid_docs, |_| {})?;
    if let Some(parent) = checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    best.save(&checkpoint)?;
    let log = log_path(&checkpoint);
    fs::write(&log, format_log(&state)).map_err(|e| Error::io(&log, e))?;
    writeln!(
        out,
        "best epoch {} of {}: valid F1 {:.6}",
        state.best_epoch, state.epoch, state.best_valid_f1
    )?;
    if let Some(dir) = &config.test_dir {
        let report = evaluate_model(&best, &load_corpus(dir)?)?;
        write!(out, "{}", report.table())?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> CliResult<CediModel> {
    CediModel::load(path).map_err(|e| CliError::usage(format!("cannot load checkpoint: {e}")))
}

/// Documents of `dir` without gold spans, in id order.
fn load_texts(dir: &Path) -> CliResult<Vec<Document>> {
    list_ids(dir, "txt")?
        .into_iter()
        .map(|id| {
            let path = dir.join(format!("{id}.txt"));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(Document::from_text(id, text))
        })
        .collect()
}

fn cmd_predict(checkpoint: &Path, input: &Path, output: &Path) -> CliResult {
    let model = load_checkpoint(checkpoint)?;
    let docs = load_texts(input)?;
    for doc in &docs {
        write_standoff(output, doc, &model.predict(doc)?, false)?;
    }
    info!(
        "wrote {} annotation files to {}",
        docs.len(),
        output.display()
    );
    Ok(())
}

/// Gold documents and the predicted spans for each, aligned by id.
fn load_pair(
    gold_dir: &Path,
    pred_dir: &Path,
) -> CliResult<(Vec<Vec<EntitySpan>>, Vec<Vec<EntitySpan>>)> {
    let gold = load_corpus(gold_dir)?;
    let gold_ids: BTreeSet<String> = gold.iter().map(|d| d.id.clone()).collect();
    let pred_ids: BTreeSet<String> = list_ids(pred_dir, "ann")?.into_iter().collect();
    let missing: Vec<_> = gold_ids.difference(&pred_ids).cloned().collect();
    let extra: Vec<_> = pred_ids.difference(&gold_ids).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CliError::data(format!(
            "document ids differ: missing predictions for [{}]; no gold for [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let mut pred = Vec::with_capacity(gold.len());
    for doc in &gold {
        let path = pred_dir.join(format!("{}.ann", doc.id));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (spans, warnings) = align(doc, &parse_annotations(&text)?)?;
        if !warnings.is_empty() {
            warn!(
                "{}: {} predicted spans snapped to tokens",
                path.display(),
                warnings.len()
            );
        }
        pred.push(spans);
    }
    Ok((gold.into_iter().map(|d| d.gold_spans).collect(), pred))
}

fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> CliResult {
    let (gold, pred) = load_pair(&args.gold, &args.pred)?;
    let report = evaluate(args.mode.into(), &gold, &pred)?;
    if args.machine {
        write!(out, "{}", report.machine())?;
    } else {
        write!(out, "{}", report.table())?;
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs, seed: u64, out: &mut dyn Write) -> CliResult {
    let (gold, a) = load_pair(&args.gold, &args.pred_a)?;
    let (_, b) = load_pair(&args.gold, &args.pred_b)?;
    let mode = args.mode.into();
    let fa = evaluate(mode, &gold, &a)?.micro.f1;
    let fb = evaluate(mode, &gold, &b)?.micro.f1;
    let p = f1_randomization(mode, &gold, &a, &b, args.shuffles, seed)?;
    writeln!(out, "F1 A = {fa:.6}")?;
    writeln!(out, "F1 B = {fb:.6}")?;
    writeln!(out, "difference = {:.6}", fa - fb)?;
    writeln!(out, "p = {p:.6} ({} shuffles)", args.shuffles)?;
    Ok(())
}

/// `text` with every span's character range replaced.
pub fn redact_text(text: &str, spans: &[EntitySpan], style: RedactStyle) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut ordered: Vec<&EntitySpan> = spans.iter().collect();
    ordered.sort_by_key(|s| s.char_start);
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    for s in ordered {
        if s.char_start < pos {
            continue;
        }
        out.extend(&chars[pos..s.char_start]);
        match style {
            RedactStyle::Placeholder => {
                out.push_str("[**");
                out.push_str(&s.label);
                out.push_str("**]");
            }
            RedactStyle::Mask => out.extend(std::iter::repeat_n('#', s.char_end - s.char_start)),
        }
        pos = s.char_end;
    }
    out.extend(&chars[pos..]);
    out
}

fn cmd_redact(checkpoint: &Path, input: &Path, output: &Path, style: RedactStyle) -> CliResult {
    let model = load_checkpoint(checkpoint)?;
    let docs = load_texts(input)?;
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    for doc in &docs {
        let redacted = redact_text(&doc.text, &model.predict(doc)?, style);
        let path = output.join(format!("{}.txt", doc.id));
        fs::write(&path, redacted).map_err(|e| Error::io(&path, e))?;
    }
    info!(
        "redacted {} documents into {}",
        docs.len(),
        output.display()
    );
    Ok(())
}

fn cmd_generate(args: &GenerateArgs, seed: u64) -> CliResult {
    let write_all = |dir: &Path, docs: &[Document]| -> CliResult {
        for d in docs {
            write_standoff(dir, d, &d.gold_spans, true)?;
        }
        Ok(())
    };
    match &args.split {
        Some(sizes) => {
            if sizes.len() != 3 {
                return Err(CliError::usage(
                    "--split takes three sizes: train,valid,test",
                ));
            }
            let total: usize = sizes.iter().sum();
            let docs = generate_synthetic_corpus(seed, total);
            let (train, rest) = docs.split_at(sizes[0]);
            let (valid, test) = rest.split_at(sizes[1]);
            write_all(&args.output.join("train"), train)?;
            write_all(&args.output.join("valid"), valid)?;
            write_all(&args.output.join("test"), test)?;
        }
        None => write_all(&args.output, &generate_synthetic_corpus(seed, args.docs))?,
    }
    Ok(())
}
