mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use mtml::augment::analysis::{pair_corpora, DEFAULT_TOP_GLOBAL, DEFAULT_TOP_PER_LABEL};
use mtml::augment::backend::DEFAULT_ENDPOINT;
use mtml::augment::{
    backtranslate_corpus, change_statistics, word_change_analysis, AugmentError, CachedBackend,
    HttpBackend, MockBackend, RetryPolicy, RoundTripConfig, TranslationBackend,
};
use mtml::corpus::{label_distribution, load_tsv, merge_multilingual, write_tsv, LoadOptions};
use mtml::features::{load_embeddings, EmbeddingTable, EncoderConfig, FeatureConfig};
use mtml::metrics::{read_predictions, score_labels, write_predictions, Scope};
use mtml::model::{predict, Inference, ModeFlags, ModelFile, TrainingMode};
use mtml::trainer::{prepare, train, TrainConfig};
use mtml::{Corpus, Language, Split, TaskId, TaskSchema};

use manifest::{write_atomic, RunManifest};

#[derive(Parser)]
#[command(
    name = "mtml",
    version,
    about = "Multi-task, multi-lingual offensive language classification"
)]
struct Cli {
    /// Seed for training and the mock translation backend.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config: trainer settings plus an optional `encoder` object.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a TSV file and write it back in canonical form.
    Ingest(IngestArgs),
    #[command(subcommand)]
    Augment(AugmentCommand),
    Train(TrainArgs),
    Predict(PredictArgs),
    Evaluate(EvaluateArgs),
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lang: Option<Language>,
    #[arg(long, default_value = "train")]
    split: Split,
    /// Rewrite labels that contradict task A instead of rejecting the row.
    #[arg(long)]
    coerce: bool,
    #[arg(long)]
    out: PathBuf,
    /// Write the label distribution as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AugmentCommand {
    /// Round-trip every text through a pivot language.
    Backtranslate(BacktranslateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Args)]
struct BacktranslateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lang: Option<Language>,
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Pivot language code, or `auto` for fr (from en) and en (from hi, de).
    #[arg(long, default_value = "auto")]
    pivot: String,
    #[arg(long)]
    out: PathBuf,
    /// Translation cache file, read and updated.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Extra attempts per request after a failure.
    #[arg(long, default_value_t = 2)]
    retries: usize,
    /// Write per-pair change statistics as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    coerce: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// One model per task.
    S,
    /// Joint labels only.
    D,
    /// Joint plus marginalized per-task losses.
    Mtl,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Task for `--mode s`: a, b or c.
    #[arg(long)]
    task: Option<TaskId>,
    /// Merge the languages into one training set.
    #[arg(long)]
    all: bool,
    /// Back-translated training file replacing its language's train file.
    #[arg(long)]
    bt: Vec<PathBuf>,
    /// Comma-separated language codes.
    #[arg(long, default_value = "en")]
    langs: String,
    /// Directory holding `<lang>_train.tsv` and optionally `<lang>_dev.tsv`.
    #[arg(long, default_value = ".")]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run log path; defaults to `<out>` with a `.log.json` extension.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Precomputed embeddings (`text_id<TAB>v1 ... vd`) instead of hashed n-grams.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Keep `NONE` rows for single-task B/C models.
    #[arg(long)]
    padded: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Scope of the per-epoch dev scores.
    #[arg(long, default_value = "hateful")]
    scope: Scope,
    #[arg(long)]
    coerce: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lang: Option<Language>,
    #[arg(long, default_value = "direct")]
    inference: Inference,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value = "hateful")]
    scope: Scope,
    /// Where to write the JSON report; printed to stdout otherwise.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    lang: Option<Language>,
    /// Task of single-task predictions.
    #[arg(long)]
    task: Option<TaskId>,
    #[arg(long)]
    coerce: bool,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Per-task label counts.
    Labeldist {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lang: Option<Language>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        coerce: bool,
    },
    /// Words introduced and removed by back-translation, per gold label.
    Btwords {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        augmented: PathBuf,
        #[arg(long)]
        lang: Option<Language>,
        #[arg(long, default_value_t = DEFAULT_TOP_GLOBAL)]
        top_global: usize,
        #[arg(long, default_value_t = DEFAULT_TOP_PER_LABEL)]
        top_per_label: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Plain-text listing; printed to stdout otherwise.
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long)]
        coerce: bool,
    },
}

enum CliError {
    Usage(String),
    Data(String),
}

type CliResult<T> = Result<T, CliError>;

trait Context<T> {
    fn data(self, what: impl Display) -> CliResult<T>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn data(self, what: impl Display) -> CliResult<T> {
        self.map_err(|e| CliError::Data(format!("{what}: {e}")))
    }
}

fn usage<T>(message: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(message.into()))
}

struct Global {
    seed: Option<u64>,
    config: Option<PathBuf>,
    quiet: bool,
}

impl Global {
    fn note(&self, message: impl Display) {
        if !self.quiet {
            eprintln!("{message}");
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let global = Global {
        seed: cli.seed,
        config: cli.config,
        quiet: cli.quiet,
    };
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(&global, a),
        Command::Augment(AugmentCommand::Backtranslate(a)) => cmd_backtranslate(&global, a),
        Command::Train(a) => cmd_train(&global, a),
        Command::Predict(a) => cmd_predict(&global, a),
        Command::Evaluate(a) => cmd_evaluate(&global, a),
        Command::Analyze(a) => cmd_analyze(&global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

/// Language of a file from the prefix of its first id, else of its file name.
fn detect_language(path: &Path) -> CliResult<Language> {
    let file = fs::File::open(path).data(path.display())?;
    let mut lines = BufReader::new(file).lines().skip(1);
    let first = lines
        .next()
        .transpose()
        .data(path.display())?
        .unwrap_or_default();
    let id = first.split('\t').next().unwrap_or_default();
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    Language::from_id(id)
        .or_else(|| Language::from_id(name))
        .ok_or_else(|| {
            CliError::Usage(format!(
                "cannot infer the language of {} from id `{id}` or its name; pass --lang",
                path.display()
            ))
        })
}

fn load_corpus(
    path: &Path,
    lang: Option<Language>,
    split: Split,
    coerce: bool,
) -> CliResult<Corpus> {
    let lang = match lang {
        Some(l) => l,
        None => detect_language(path)?,
    };
    load_tsv(path, lang, split, LoadOptions { coerce }).data(path.display())
}

fn to_json_pretty(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn write_artifact(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes).data(format!("writing {}", path.display()))
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) -> CliResult<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
            Err(CliError::Data(format!("stdout: {e}")))
        }
        _ => Ok(()),
    }
}

fn finish(manifest: RunManifest, primary: &Path) -> CliResult<()> {
    manifest.finish(primary).data("writing manifest")?;
    Ok(())
}

struct RunConfig {
    train: TrainConfig,
    encoder: Option<EncoderConfig>,
}

/// Reads trainer settings; an `encoder` key, if present, selects the encoder.
fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig {
            train: TrainConfig::default(),
            encoder: None,
        });
    };
    let text = fs::read_to_string(path).data(path.display())?;
    let mut value: Value = serde_json::from_str(&text).data(path.display())?;
    let Some(object) = value.as_object_mut() else {
        return usage(format!("{}: config must be a JSON object", path.display()));
    };
    let encoder = object
        .remove("encoder")
        .map(serde_json::from_value::<EncoderConfig>)
        .transpose()
        .map_err(|e| CliError::Usage(format!("{}: encoder: {e}", path.display())))?;
    let train = serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(RunConfig { train, encoder })
}

fn cmd_ingest(g: &Global, a: &IngestArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start(g.config.as_deref(), None).data("manifest")?;
    let corpus = load_corpus(&a.input, a.lang, a.split, a.coerce)?;
    manifest.input(&a.input).data("hashing input")?;
    let mut buf = Vec::new();
    write_tsv(&corpus, &mut buf).data("serializing corpus")?;
    write_artifact(&a.out, &buf)?;
    manifest.artifact(&a.out);
    let dist = distribution_json(&corpus);
    if let Some(stats) = &a.stats {
        write_artifact(stats, to_json_pretty(&dist).as_bytes())?;
        manifest.artifact(stats);
    }
    g.note(format!(
        "{} rows, tasks {:?}",
        corpus.len(),
        corpus.schema.tasks()
    ));
    finish(manifest, &a.out)
}

fn distribution_json(corpus: &Corpus) -> Value {
    let dist = label_distribution(corpus);
    let mut out = serde_json::Map::new();
    out.insert("examples".into(), json!(corpus.len()));
    for (task, counts) in &dist.0 {
        let counts: BTreeMap<&str, usize> = counts.iter().map(|(l, &n)| (l.as_str(), n)).collect();
        out.insert(task.column().into(), json!(counts));
    }
    Value::Object(out)
}

fn cmd_backtranslate(g: &Global, a: &BacktranslateArgs) -> CliResult<()> {
    let seed = g.seed.unwrap_or(TrainConfig::default().seed);
    let mut manifest = RunManifest::start(g.config.as_deref(), Some(seed)).data("manifest")?;
    let corpus = load_corpus(&a.input, a.lang, Split::Train, a.coerce)?;
    manifest.input(&a.input).data("hashing input")?;
    let mut config = RoundTripConfig {
        concurrency: a.concurrency.max(1),
        retry: RetryPolicy {
            attempts: a.retries + 1,
            ..RetryPolicy::default()
        },
        ..RoundTripConfig::default()
    };
    if a.pivot != "auto" {
        for lang in Language::ALL {
            config.pivots.insert(lang, a.pivot.to_lowercase());
        }
    }
    let augmented = match a.backend {
        BackendKind::Mock => {
            run_backtranslation(MockBackend::new(seed), &corpus, &config, a.cache.as_deref())
        }
        BackendKind::Http => run_backtranslation(
            HttpBackend::from_env(a.endpoint.clone()),
            &corpus,
            &config,
            a.cache.as_deref(),
        ),
    }?;
    let mut buf = Vec::new();
    write_tsv(&augmented, &mut buf).data("serializing corpus")?;
    write_artifact(&a.out, &buf)?;
    manifest.artifact(&a.out);
    let stats = change_statistics(&corpus, &augmented).data("pairing")?;
    if let Some(path) = &a.stats {
        write_artifact(path, to_json_pretty(&stats).as_bytes())?;
        manifest.artifact(path);
    }
    if let Some(cache) = &a.cache {
        manifest.artifact(cache);
    }
    g.note(format!(
        "{} originals, {} rows written; {} copies changed, {} unchanged",
        corpus.len(),
        augmented.len(),
        stats.changed,
        stats.unchanged
    ));
    finish(manifest, &a.out)
}

fn run_backtranslation<B: TranslationBackend>(
    backend: B,
    corpus: &Corpus,
    config: &RoundTripConfig,
    cache: Option<&Path>,
) -> CliResult<Corpus> {
    let map_err = |e: AugmentError| match e {
        AugmentError::NoPivot(_) | AugmentError::PivotIsSource(_) => CliError::Usage(e.to_string()),
        other => CliError::Data(other.to_string()),
    };
    match cache {
        Some(path) => {
            let cached = CachedBackend::with_file(backend, path).data(path.display())?;
            let result = backtranslate_corpus(corpus, &cached, config);
            // Successful translations stay cached even when the run fails.
            cached.save().data(path.display())?;
            result.map_err(map_err)
        }
        None => backtranslate_corpus(corpus, &backend, config).map_err(map_err),
    }
}

fn parse_langs(s: &str) -> CliResult<Vec<Language>> {
    let mut langs = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let lang: Language = part.parse().map_err(CliError::Usage)?;
        if !langs.contains(&lang) {
            langs.push(lang);
        }
    }
    if langs.is_empty() {
        return usage("--langs is empty");
    }
    Ok(langs)
}

fn merge(mut corpora: Vec<Corpus>) -> CliResult<Corpus> {
    if corpora.len() == 1 {
        return Ok(corpora.pop().expect("one corpus"));
    }
    merge_multilingual(&corpora).data("merging languages")
}

fn cmd_train(g: &Global, a: &TrainArgs) -> CliResult<()> {
    let mode = match (a.mode, a.task) {
        (ModeArg::S, Some(task)) => TrainingMode::Single { task },
        (ModeArg::S, None) => return usage("--mode s requires --task a|b|c"),
        (_, Some(_)) => return usage("--task is only valid with --mode s"),
        (ModeArg::D, None) => TrainingMode::Joint,
        (ModeArg::Mtl, None) => TrainingMode::Multitask,
    };
    if a.padded && !matches!(mode, TrainingMode::Single { task } if task != TaskId::A) {
        return usage("--padded applies only to --mode s --task b|c");
    }
    let langs = parse_langs(&a.langs)?;
    if langs.len() > 1 && !a.all {
        return usage("training on several languages requires --all");
    }

    let mut run_config = load_config(g.config.as_deref())?;
    let config = &mut run_config.train;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        config.epochs = epochs;
    }
    if let Some(lr) = a.lr {
        config.learning_rate = Some(lr);
    }
    if let Some(batch) = a.batch_size {
        config.batch_size = batch;
    }
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut manifest =
        RunManifest::start(g.config.as_deref(), Some(config.seed)).data("manifest")?;

    let mut bt_files: HashMap<Language, &PathBuf> = HashMap::new();
    for path in &a.bt {
        let lang = detect_language(path)?;
        if !langs.contains(&lang) {
            return usage(format!(
                "{}: language {lang} is not in --langs",
                path.display()
            ));
        }
        if bt_files.insert(lang, path).is_some() {
            return usage(format!("more than one --bt file for {lang}"));
        }
    }

    let mut train_sets = Vec::new();
    let mut dev_sets = Vec::new();
    for &lang in &langs {
        let default_path = a.data.join(format!("{}_train.tsv", lang.code()));
        let path = bt_files
            .get(&lang)
            .map_or(default_path.as_path(), |p| p.as_path());
        train_sets.push(load_corpus(path, Some(lang), Split::Train, a.coerce)?);
        manifest.input(path).data("hashing input")?;
        let dev_path = a.data.join(format!("{}_dev.tsv", lang.code()));
        if dev_path.exists() {
            dev_sets.push(load_corpus(&dev_path, Some(lang), Split::Dev, a.coerce)?);
            manifest.input(&dev_path).data("hashing input")?;
        }
    }
    let corpus = merge(train_sets)?;
    let dev = if dev_sets.is_empty() {
        None
    } else {
        Some(merge(dev_sets)?)
    };
    let (corpus, schema) = prepare(&corpus, mode, a.padded).data("preparing training data")?;

    let (encoder, table): (EncoderConfig, Option<EmbeddingTable>) =
        match (&a.embeddings, run_config.encoder) {
            (Some(path), encoder) => {
                let table = load_embeddings(path).data(path.display())?;
                manifest.input(path).data("hashing input")?;
                match encoder {
                    Some(EncoderConfig::Hashed(_)) => {
                        return usage("--embeddings conflicts with a hashed encoder in the config")
                    }
                    Some(EncoderConfig::Embeddings { width }) if width != table.width() => {
                        return Err(CliError::Data(format!(
                            "{}: vectors have width {}, config says {width}",
                            path.display(),
                            table.width()
                        )))
                    }
                    _ => {}
                }
                (
                    EncoderConfig::Embeddings {
                        width: table.width(),
                    },
                    Some(table),
                )
            }
            (None, Some(EncoderConfig::Embeddings { .. })) => {
                return usage("an embeddings encoder requires --embeddings")
            }
            (None, encoder) => (
                encoder.unwrap_or(EncoderConfig::Hashed(FeatureConfig::default())),
                None,
            ),
        };

    let flags = ModeFlags {
        mode,
        all: a.all,
        bt: !a.bt.is_empty(),
    };
    g.note(format!(
        "training {} on {} examples",
        flags.tag(),
        corpus.len()
    ));
    let trained = train(
        &corpus,
        &schema,
        flags,
        &encoder,
        table.as_ref(),
        &run_config.train,
        dev.as_ref().map(|d| (d, a.scope)),
    )
    .data("training")?;
    for epoch in &trained.run.epochs {
        let dev = epoch
            .dev
            .as_ref()
            .map(|scores| {
                scores
                    .iter()
                    .map(|(t, s)| format!(" {} macro {:.4}", t.column(), s.macro_f1))
                    .collect::<String>()
            })
            .unwrap_or_default();
        g.note(format!(
            "epoch {} loss {:.6}{dev}",
            epoch.epoch, epoch.mean_total
        ));
    }

    write_artifact(&a.out, trained.model.to_json().as_bytes())?;
    manifest.artifact(&a.out);
    let log = a
        .log
        .clone()
        .unwrap_or_else(|| a.out.with_extension("log.json"));
    write_artifact(&log, to_json_pretty(&trained.run).as_bytes())?;
    manifest.artifact(&log);
    finish(manifest, &a.out)
}

fn cmd_predict(g: &Global, a: &PredictArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start(g.config.as_deref(), None).data("manifest")?;
    let model = ModelFile::load(&a.model).data(a.model.display())?;
    manifest.input(&a.model).data("hashing input")?;
    // Labels in the input are not used, so contradictions are coerced rather than rejected.
    let corpus = load_corpus(&a.input, a.lang, Split::Test, true)?;
    manifest.input(&a.input).data("hashing input")?;
    let table = match (&model.encoder, &a.embeddings) {
        (EncoderConfig::Embeddings { width }, Some(path)) => {
            let table = load_embeddings(path).data(path.display())?;
            if table.width() != *width {
                return Err(CliError::Data(format!(
                    "{}: vectors have width {}, the model expects {width}",
                    path.display(),
                    table.width()
                )));
            }
            manifest.input(path).data("hashing input")?;
            Some(table)
        }
        (EncoderConfig::Embeddings { .. }, None) => {
            return Err(CliError::Data(
                "this model reads embeddings; pass --embeddings".into(),
            ))
        }
        (EncoderConfig::Hashed(_), Some(_)) => {
            return usage("this model uses hashed features; drop --embeddings")
        }
        (EncoderConfig::Hashed(_), None) => None,
    };
    let mut rows = Vec::with_capacity(corpus.len());
    for ex in &corpus.examples {
        let x = model
            .encoder
            .encode(&ex.id, &ex.text, table.as_ref())
            .data(&ex.id)?;
        let p = predict(&model.head, &x, &model.schema, a.inference).data(&ex.id)?;
        rows.push((ex.id.clone(), p));
    }
    let mut buf = Vec::new();
    write_predictions(&mut buf, &model.schema, &rows).data("serializing predictions")?;
    write_artifact(&a.out, &buf)?;
    manifest.artifact(&a.out);
    let inconsistent = rows.iter().filter(|(_, p)| !p.is_consistent()).count();
    g.note(format!(
        "{} predictions ({} inference), {inconsistent} inconsistent",
        rows.len(),
        a.inference
    ));
    finish(manifest, &a.out)
}

/// Schema of a predictions file, from `--task` or the label arity.
fn prediction_schema(task: Option<TaskId>, first: Option<&str>) -> CliResult<TaskSchema> {
    if let Some(task) = task {
        return Ok(TaskSchema::single_task(task, true));
    }
    let Some(label) = first else {
        return Ok(TaskSchema::full());
    };
    let tasks = match label.split('-').count() {
        1 if matches!(label, "HOF" | "NOT") => vec![TaskId::A],
        1 => return usage("single-task predictions need --task"),
        n @ 2..=3 => TaskId::ALL[..n].to_vec(),
        n => return Err(CliError::Data(format!("label `{label}` has {n} parts"))),
    };
    TaskSchema::build(&tasks).data("schema")
}

fn cmd_evaluate(g: &Global, a: &EvaluateArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start(g.config.as_deref(), None).data("manifest")?;
    let gold = load_corpus(&a.gold, a.lang, Split::Test, a.coerce)?;
    manifest.input(&a.gold).data("hashing input")?;
    let file = fs::File::open(&a.pred).data(a.pred.display())?;
    let rows = read_predictions(BufReader::new(file)).data(a.pred.display())?;
    manifest.input(&a.pred).data("hashing input")?;

    let pred_schema = prediction_schema(a.task, rows.first().map(|(_, l)| l.as_str()))?;
    let mut parsed = HashMap::with_capacity(rows.len());
    for (id, label) in &rows {
        let parts = pred_schema
            .parse_parts(label)
            .data(format!("{}: prediction for {id}", a.pred.display()))?;
        if parsed.insert(id.clone(), parts).is_some() {
            return Err(CliError::Data(format!(
                "{}: duplicate id {id}",
                a.pred.display()
            )));
        }
    }
    let shared: Vec<TaskId> = pred_schema
        .tasks()
        .iter()
        .copied()
        .filter(|&t| gold.schema.has_task(t))
        .collect();
    let schema = match shared[..] {
        [] => return Err(CliError::Data("gold and predictions share no task".into())),
        [task] if task != TaskId::A => TaskSchema::single_task(task, true),
        _ => TaskSchema::build(&shared).data("schema")?,
    };
    let report = score_labels(&gold, &parsed, &schema, a.scope).data("scoring")?;
    for (task, r) in &report.tasks {
        g.note(format!(
            "{} n={} weighted_f1={:.4} macro_f1={:.4}",
            task.column(),
            r.examples,
            r.weighted_f1,
            r.macro_f1
        ));
    }
    match &a.report {
        Some(path) => {
            write_artifact(path, report.to_json().as_bytes())?;
            manifest.artifact(path);
            finish(manifest, path)
        }
        None => emit(&report.to_json()),
    }
}

fn cmd_analyze(g: &Global, command: &AnalyzeCommand) -> CliResult<()> {
    let mut manifest = RunManifest::start(g.config.as_deref(), None).data("manifest")?;
    match command {
        AnalyzeCommand::Labeldist {
            input,
            lang,
            out,
            coerce,
        } => {
            let corpus = load_corpus(input, *lang, Split::Train, *coerce)?;
            manifest.input(input).data("hashing input")?;
            let dist = label_distribution(&corpus);
            let mut listing = format!("examples\t{}\n", corpus.len());
            for (task, counts) in &dist.0 {
                for (label, n) in counts {
                    listing.push_str(&format!("{}\t{}\t{n}\n", task.column(), label.as_str()));
                }
            }
            emit(&listing)?;
            if let Some(path) = out {
                write_artifact(path, to_json_pretty(&distribution_json(&corpus)).as_bytes())?;
                manifest.artifact(path);
                finish(manifest, path)?;
            }
            Ok(())
        }
        AnalyzeCommand::Btwords {
            original,
            augmented,
            lang,
            top_global,
            top_per_label,
            out,
            text,
            coerce,
        } => {
            let orig = load_corpus(original, *lang, Split::Train, *coerce)?;
            let aug = load_corpus(augmented, *lang, Split::Train, *coerce)?;
            manifest.input(original).data("hashing input")?;
            manifest.input(augmented).data("hashing input")?;
            let pairs = pair_corpora(&orig, &aug).data("pairing")?;
            let report = word_change_analysis(&pairs, *top_global, *top_per_label);
            let listing = report.to_text();
            match text {
                Some(path) => {
                    write_artifact(path, listing.as_bytes())?;
                    manifest.artifact(path);
                }
                None => emit(&listing)?,
            }
            if let Some(path) = out {
                write_artifact(path, to_json_pretty(&report).as_bytes())?;
                manifest.artifact(path);
            }
            match out.as_ref().or(text.as_ref()) {
                Some(primary) => finish(manifest, primary),
                None => Ok(()),
            }
        }
    }
}
