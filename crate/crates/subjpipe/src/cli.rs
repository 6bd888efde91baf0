//! `subjpipe` command line: stats, preprocess, translate, train, predict,
//! evaluate, the end-to-end run, and combined report rendering.
//!
//! Flag values override config-file values, which override defaults. The
//! config file is flat `key = value` text with `#` comments; keys match the
//! long flag names with dashes or underscores.

use std::collections::{BTreeSet, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::corpus::{self, CorpusSplit, Language, SplitKind};
use crate::error::{Error, Result};
use crate::ioutil;
use crate::metrics::{self, MetricsReport};
use crate::preprocess::{preprocess_split, EmojiTable};
use crate::trainer::{self, ReferenceEncoder, TrainConfig};
use crate::translate::{
    HttpBackend, StubBackend, TranslationBackend, TranslationCache, MT_KEY_ENV, MT_URL_ENV,
};

#[derive(Parser)]
#[command(
    name = "subjpipe",
    version,
    about = "Multilingual subjectivity classification pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the label distribution of a corpus file
    Stats(StatsArgs),
    /// Normalize corpus text: demojize, strip mentions and URLs
    Preprocess(PreprocessArgs),
    /// Translate a corpus file to English through the configured backend
    Translate(TranslateArgs),
    /// Train the reference encoder and save a checkpoint
    Train(TrainArgs),
    /// Predict labels for a corpus file with a saved checkpoint
    Predict(PredictArgs),
    /// Score a prediction file against gold labels
    Evaluate(EvaluateArgs),
    /// Full pipeline: load, preprocess, translate, train, predict, evaluate
    Run(RunArgs),
    /// Render a combined table from one or more metrics files
    Report(ReportArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Input corpus TSV
    #[arg(long)]
    input: PathBuf,
    /// Language tag: ar, bg, en, de, it, multi
    #[arg(long)]
    lang: String,
    /// Split tag: train, dev, test
    #[arg(long, default_value = "train")]
    split: String,
    /// Input carries a solved_conflict column
    #[arg(long)]
    confidence: bool,
}

impl CorpusArgs {
    fn load(&self) -> Result<CorpusSplit> {
        corpus::load_tsv(
            &self.input,
            Language::from_tag(&self.lang)?,
            SplitKind::from_tag(&self.split)?,
            self.confidence,
        )
    }
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output TSV
    #[arg(long)]
    out: PathBuf,
    /// Override the bundled emoji table
    #[arg(long)]
    emoji_table: Option<PathBuf>,
}

#[derive(Args)]
struct TranslateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output TSV
    #[arg(long)]
    out: PathBuf,
    /// Offline stub mapping file (source\tenglish); forces the stub backend
    #[arg(long)]
    mt_stub: Option<PathBuf>,
    /// Translation cache file
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus TSV
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    lang: Option<String>,
    /// Training input carries a solved_conflict column
    #[arg(long)]
    confidence: bool,
    /// Checkpoint output path
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[command(flatten)]
    knobs: KnobArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Corpus TSV to label
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    lang: String,
    /// Input has no label column (`sentence_id\tsentence`)
    #[arg(long)]
    unlabeled: bool,
    /// Checkpoint produced by `train` or `run`
    #[arg(long)]
    model: PathBuf,
    /// Prediction TSV output
    #[arg(long)]
    out: PathBuf,
    /// Translate the input to English before predicting
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    translate: Option<bool>,
    #[arg(long)]
    mt_stub: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    emoji_table: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Gold labels: corpus TSV or prediction-format TSV
    #[arg(long)]
    gold: PathBuf,
    /// Prediction TSV
    #[arg(long)]
    pred: PathBuf,
    /// Also write the metrics TSV here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    lang: Option<String>,
    /// Training corpus TSV
    #[arg(long)]
    train: Option<PathBuf>,
    /// Labeled test corpus TSV
    #[arg(long)]
    test: Option<PathBuf>,
    /// Directory for every output artifact
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Training input carries a solved_conflict column
    #[arg(long)]
    confidence: bool,
    /// Write the text actually consumed by training and prediction
    #[arg(long)]
    dump_preprocessed: bool,
    #[command(flatten)]
    knobs: KnobArgs,
}

/// Knobs resolvable from flags, the config file, or defaults.
#[derive(Args)]
struct KnobArgs {
    /// Flat `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    confidence_weight: Option<f64>,
    /// Reference encoder embedding width
    #[arg(long)]
    dim: Option<usize>,
    /// Translate non-English data to English before training
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    translate: Option<bool>,
    /// Offline stub mapping file; forces the stub backend
    #[arg(long)]
    mt_stub: Option<PathBuf>,
    /// Translation cache file
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Override the bundled emoji table
    #[arg(long)]
    emoji_table: Option<PathBuf>,
}

/// Values from the config file, consulted when a flag is absent.
struct Settings {
    file: HashMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Settings> {
        let mut file = HashMap::new();
        if let Some(path) = path {
            let content = ioutil::read_lossy(path)?;
            for (lineno, line) in content.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(Error::Malformed {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        msg: "expected `key = value`".to_string(),
                    });
                };
                file.insert(
                    key.trim().replace('-', "_"),
                    value.trim().to_string(),
                );
            }
        }
        Ok(Settings { file })
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::invalid(format!("config key {key}: cannot parse \"{raw}\""))
            }),
        }
    }

    fn get<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.parse(key)?.unwrap_or(default)),
        }
    }

    fn get_opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.parse(key),
        }
    }

    fn get_bool(&self, key: &str, flag: Option<bool>, default: bool) -> Result<bool> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(other) => Err(Error::invalid(format!(
                "config key {key}: expected a boolean, got \"{other}\""
            ))),
        }
    }

    fn require<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<T> {
        self.get_opt(key, flag)?
            .ok_or_else(|| Error::invalid(format!("missing required setting --{}", key.replace('_', "-"))))
    }
}

/// Knob values after precedence resolution.
struct Knobs {
    train_cfg: TrainConfig,
    dim: usize,
    translate: bool,
    mt_stub: Option<PathBuf>,
    cache: Option<PathBuf>,
    emoji_table: Option<PathBuf>,
    settings: Settings,
}

impl KnobArgs {
    fn resolve(&self) -> Result<Knobs> {
        let defaults = TrainConfig::default();
        let settings = Settings::load(self.config.as_deref())?;
        let train_cfg = TrainConfig {
            batch_size: settings.get("batch_size", self.batch_size, defaults.batch_size)?,
            learning_rate: settings.get("lr", self.lr, defaults.learning_rate)?,
            epochs: settings.get("epochs", self.epochs, defaults.epochs)?,
            seed: settings.get("seed", self.seed, defaults.seed)?,
            confidence_weight: settings.get(
                "confidence_weight",
                self.confidence_weight,
                defaults.confidence_weight,
            )?,
        };
        Ok(Knobs {
            train_cfg,
            dim: settings.get("dim", self.dim, 16)?,
            translate: settings.get_bool("translate", self.translate, false)?,
            mt_stub: settings.get_opt("mt_stub", self.mt_stub.clone())?,
            cache: settings.get_opt("cache", self.cache.clone())?,
            emoji_table: settings.get_opt("emoji_table", self.emoji_table.clone())?,
            settings,
        })
    }
}

fn load_emoji_table(path: Option<&Path>) -> Result<EmojiTable> {
    match path {
        Some(path) => EmojiTable::from_path(path),
        None => Ok(EmojiTable::bundled().clone()),
    }
}

/// Stub when `--mt-stub` is given or no credential is present; HTTP
/// otherwise.
fn resolve_backend(mt_stub: Option<&Path>) -> Result<Box<dyn TranslationBackend>> {
    if let Some(path) = mt_stub {
        return Ok(Box::new(StubBackend::from_path(path)?));
    }
    match std::env::var(MT_KEY_ENV) {
        Ok(key) => {
            let url = std::env::var(MT_URL_ENV).map_err(|_| {
                Error::invalid(format!("{MT_URL_ENV} must be set when {MT_KEY_ENV} is present"))
            })?;
            Ok(Box::new(HttpBackend::new(url, key)))
        }
        Err(_) => Ok(Box::new(StubBackend::empty())),
    }
}

fn translate_stage(
    split: &CorpusSplit,
    mt_stub: Option<&Path>,
    cache_path: &Path,
) -> Result<CorpusSplit> {
    let backend = resolve_backend(mt_stub)?;
    let mut cache = TranslationCache::open(cache_path)?;
    crate::translate::translate_split(split, backend.as_ref(), &mut cache)
}

/// Whitespace-lowercase token set of every training sentence, sorted.
fn build_vocab(split: &CorpusSplit) -> Vec<String> {
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    for row in &split.rows {
        for token in row.text.split_whitespace() {
            vocab.insert(token.to_lowercase());
        }
    }
    vocab.into_iter().collect()
}

fn stats_table(language: Language, split: SplitKind, s: &corpus::DistributionStats) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<13} {:<15} {:<15} {}\n",
        "Language", "Dataset", "OBJ (N) (%)", "SUBJ (N) (%)"
    ));
    let dataset = format!("{} ({})", split.display_name(), s.total);
    let obj = format!("{} ({:.2})", s.obj_count, s.obj_pct);
    let subj = format!("{} ({:.2})", s.subj_count, s.subj_pct);
    out.push_str(&format!(
        "{:<13} {dataset:<15} {obj:<15} {subj}\n",
        language.display_name(),
    ));
    out
}

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let split = args.corpus.load()?;
    let s = corpus::stats(&split)?;
    print!(
        "{}",
        stats_table(
            Language::from_tag(&args.corpus.lang)?,
            SplitKind::from_tag(&args.corpus.split)?,
            &s
        )
    );
    Ok(())
}

fn cmd_preprocess(args: &PreprocessArgs) -> Result<()> {
    let split = args.corpus.load()?;
    let table = load_emoji_table(args.emoji_table.as_deref())?;
    corpus::write_split(&preprocess_split(&split, &table), &args.out)
}

fn cmd_translate(args: &TranslateArgs) -> Result<()> {
    let split = args.corpus.load()?;
    let cache_path = args
        .cache
        .clone()
        .unwrap_or_else(|| args.out.with_extension("cache.tsv"));
    let translated = translate_stage(&split, args.mt_stub.as_deref(), &cache_path)?;
    corpus::write_split(&translated, &args.out)
}

/// Shared by `train` and `run`: preprocess, optionally translate, build the
/// vocab, train, and hand back the encoder plus the text the model saw.
struct TrainedPipeline {
    encoder: ReferenceEncoder,
    report: trainer::TrainReport,
    train_split: CorpusSplit,
}

fn fit(
    raw_train: &CorpusSplit,
    knobs: &Knobs,
    emoji: &EmojiTable,
    cache_path: &Path,
) -> Result<TrainedPipeline> {
    let mut train_split = preprocess_split(raw_train, emoji);
    if knobs.translate {
        train_split = translate_stage(&train_split, knobs.mt_stub.as_deref(), cache_path)
            .map_err(|e| e.at_stage("translate"))?;
    }
    let vocab = build_vocab(&train_split);
    let mut encoder = ReferenceEncoder::new(vocab, knobs.dim, knobs.train_cfg.seed)
        .map_err(|e| e.at_stage("train"))?;
    let report = trainer::train(&train_split, &mut encoder, &knobs.train_cfg)
        .map_err(|e| e.at_stage("train"))?;
    Ok(TrainedPipeline {
        encoder,
        report,
        train_split,
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let knobs = args.knobs.resolve()?;
    let train_path: PathBuf = knobs.settings.require("train", args.train.clone())?;
    let lang = Language::from_tag(&knobs.settings.require("lang", args.lang.clone())?)?;
    let model_out: PathBuf = knobs.settings.require("model_out", args.model_out.clone())?;

    let raw = corpus::load_tsv(&train_path, lang, SplitKind::Train, args.confidence)
        .map_err(|e| e.at_stage("load"))?;
    let emoji = load_emoji_table(knobs.emoji_table.as_deref()).map_err(|e| e.at_stage("preprocess"))?;
    let cache_path = knobs
        .cache
        .clone()
        .unwrap_or_else(|| model_out.with_extension("cache.tsv"));
    let fitted = fit(&raw, &knobs, &emoji, &cache_path)?;
    fitted.encoder.save(&model_out).map_err(|e| e.at_stage("train"))?;
    for (epoch, loss) in fitted.report.epoch_losses.iter().enumerate() {
        println!("epoch\t{epoch}\tloss\t{loss:.6}");
    }
    println!("saved\t{}", model_out.display());
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let lang = Language::from_tag(&args.lang)?;
    let raw = if args.unlabeled {
        corpus::load_unlabeled_tsv(&args.test, lang, SplitKind::Test)
    } else {
        corpus::load_tsv(&args.test, lang, SplitKind::Test, false)
    }
    .map_err(|e| e.at_stage("load"))?;

    let emoji = load_emoji_table(args.emoji_table.as_deref()).map_err(|e| e.at_stage("preprocess"))?;
    let mut split = preprocess_split(&raw, &emoji);
    if args.translate.unwrap_or(false) {
        let cache_path = args
            .cache
            .clone()
            .unwrap_or_else(|| args.out.with_extension("cache.tsv"));
        split = translate_stage(&split, args.mt_stub.as_deref(), &cache_path)
            .map_err(|e| e.at_stage("translate"))?;
    }
    let encoder = ReferenceEncoder::load(&args.model).map_err(|e| e.at_stage("predict"))?;
    let predictions = trainer::predict(&split, &encoder).map_err(|e| e.at_stage("predict"))?;
    let (ids, labels): (Vec<String>, Vec<corpus::SubjLabel>) = predictions.into_iter().unzip();
    corpus::write_predictions(&ids, &labels, &args.out).map_err(|e| e.at_stage("predict"))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let report = metrics::evaluate_files(&args.gold, &args.pred)?;
    println!("{}", metrics::METRICS_HEADER);
    println!("{report}");
    if let Some(out) = &args.out {
        metrics::write_report_tsv(&report, out)?;
    }
    Ok(())
}

fn report_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<13} {:<9} {:<8} {:<8} {:<8} {:<7} {:<7} {}\n",
        "Language", "F1 Macro", "P Macro", "R Macro", "F1 SUBJ", "P SUBJ", "R SUBJ", "Accuracy"
    ));
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<13} {:<9.4} {:<8.4} {:<8.4} {:<8.4} {:<7.4} {:<7.4} {:.4}\n",
            name, r.f1_macro, r.p_macro, r.r_macro, r.f1_subj, r.p_subj, r.r_subj, r.accuracy
        ));
    }
    out
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let knobs = args.knobs.resolve()?;
    let lang = Language::from_tag(&knobs.settings.require("lang", args.lang.clone())?)?;
    let train_path: PathBuf = knobs.settings.require("train", args.train.clone())?;
    let test_path: PathBuf = knobs.settings.require("test", args.test.clone())?;
    let out_dir: PathBuf = knobs.settings.require("out_dir", args.out_dir.clone())?;

    std::fs::create_dir_all(&out_dir).map_err(|source| Error::Write {
        path: out_dir.clone(),
        source,
    })?;

    let raw_train = corpus::load_tsv(&train_path, lang, SplitKind::Train, args.confidence)
        .map_err(|e| e.at_stage("load"))?;
    let raw_test = corpus::load_tsv(&test_path, lang, SplitKind::Test, false)
        .map_err(|e| e.at_stage("load"))?;

    let emoji = load_emoji_table(knobs.emoji_table.as_deref()).map_err(|e| e.at_stage("preprocess"))?;
    let cache_path = knobs.cache.clone().unwrap_or_else(|| out_dir.join("mt_cache.tsv"));

    let fitted = fit(&raw_train, &knobs, &emoji, &cache_path)?;

    let mut test_split = preprocess_split(&raw_test, &emoji);
    if knobs.translate {
        test_split = translate_stage(&test_split, knobs.mt_stub.as_deref(), &cache_path)
            .map_err(|e| e.at_stage("translate"))?;
    }

    if args.dump_preprocessed {
        corpus::write_split(&fitted.train_split, &out_dir.join("preprocessed_train.tsv"))
            .map_err(|e| e.at_stage("preprocess"))?;
        corpus::write_split(&test_split, &out_dir.join("preprocessed_test.tsv"))
            .map_err(|e| e.at_stage("preprocess"))?;
    }

    fitted
        .encoder
        .save(&out_dir.join("model.ckpt"))
        .map_err(|e| e.at_stage("train"))?;
    let mut trace = String::from("epoch\tloss\n");
    for (epoch, loss) in fitted.report.epoch_losses.iter().enumerate() {
        trace.push_str(&format!("{epoch}\t{loss:.12}\n"));
    }
    ioutil::write_atomic(&out_dir.join("train_trace.tsv"), trace.as_bytes())
        .map_err(|e| e.at_stage("train"))?;

    let predictions_path = out_dir.join("predictions.tsv");
    let predictions = trainer::predict(&test_split, &fitted.encoder).map_err(|e| e.at_stage("predict"))?;
    let (ids, labels): (Vec<String>, Vec<corpus::SubjLabel>) = predictions.into_iter().unzip();
    corpus::write_predictions(&ids, &labels, &predictions_path).map_err(|e| e.at_stage("predict"))?;

    let report = metrics::evaluate_files(&test_path, &predictions_path).map_err(|e| e.at_stage("evaluate"))?;
    metrics::write_report_tsv(&report, &out_dir.join("metrics.tsv")).map_err(|e| e.at_stage("evaluate"))?;

    let table = report_table(&[(lang.tag().to_string(), report)]);
    let mut human = String::from("subjpipe run\n");
    human.push_str(&format!("language: {}\n", lang.tag()));
    human.push_str(&format!(
        "train: {} ({} rows, {} skipped)\n",
        train_path.display(),
        fitted.train_split.rows.len(),
        fitted.train_split.skipped_count
    ));
    human.push_str(&format!(
        "test: {} ({} rows, {} skipped)\n",
        test_path.display(),
        test_split.rows.len(),
        test_split.skipped_count
    ));
    human.push_str(&format!(
        "model: dim {}, vocab {}, steps {}\n",
        fitted.encoder.dim(),
        fitted.encoder.vocab().len(),
        fitted.report.steps
    ));
    if let Some(last) = fitted.report.epoch_losses.last() {
        human.push_str(&format!("final epoch loss: {last:.6}\n"));
    }
    human.push('\n');
    human.push_str(&table);
    ioutil::write_atomic(&out_dir.join("report.txt"), human.as_bytes())
        .map_err(|e| e.at_stage("evaluate"))?;

    print!("{table}");
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.metrics {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        rows.push((name, metrics::read_report_tsv(path)?));
    }
    print!("{}", report_table(&rows));
    Ok(())
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics TSV files, one table row each
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
}

/// Parse and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap prints its own message; usage errors exit 2
            let _ = err.print();
            return err.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Stats(args) => cmd_stats(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Translate(args) => cmd_translate(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("subjpipe: {err}");
            1
        }
    }
}
