//! Command line front end. Models are trained and stored in `f32`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error or missing
//! input, 3 corrupt model file.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::corpus::{build_vocabulary, encode_corpus, parse_schema, tokenize, TopicSchema, Vocabulary, DEFAULT_MIN_COUNT};
use crate::embedding::EmbeddingModel;
use crate::error::Error;
use crate::eval::{evaluate_pipeline, keyword_sweep, metrics_table, parse_test_set, sweep_table};
use crate::inference::{project_topics_2d, top_terms, Scoring};
use crate::textcnn::CnnModel;
use crate::training::{run_pipeline, Classifier, PipelineConfig};

pub const EMBEDDING_FILE: &str = "embedding.txt";
pub const ASPECT_CNN_FILE: &str = "aspect.cnn";
pub const SENTIMENT_CNN_FILE: &str = "sentiment.cnn";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const SCHEMA_FILE: &str = "schema.txt";
pub const PIPELINE_FILE: &str = "pipeline.txt";
pub const LOG_FILE: &str = "train.log";

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "JASEN_SEED";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn corrupt(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError {
            code: 3,
            message: format!("{}: corrupt model file: {e}", path.display()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
            Error::InvalidArgument(_) => 2,
            Error::Format(_) => 3,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Paths and every tunable of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub min_count: usize,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            schema: None,
            test: None,
            model_dir: None,
            min_count: DEFAULT_MIN_COUNT,
            pipeline: PipelineConfig::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> crate::Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> crate::Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("{key}: expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.pipeline.embed.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.pipeline.embed.seed = seed;
        self.pipeline.cnn.seed = seed;
    }

    pub fn set_threads(&mut self, threads: usize) {
        self.pipeline.embed.threads = threads;
        self.pipeline.cnn.threads = threads;
    }

    /// Sets one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> crate::Result<()> {
        let p = &mut self.pipeline;
        match key {
            "corpus" => self.corpus = Some(value.into()),
            "schema" => self.schema = Some(value.into()),
            "test" => self.test = Some(value.into()),
            "model_dir" => self.model_dir = Some(value.into()),
            "min_count" => self.min_count = parse_value(key, value)?,
            "dim" => p.embed.dim = parse_value(key, value)?,
            "window" => p.embed.window = parse_value(key, value)?,
            "lambda_g" => p.embed.lambda_g = parse_value(key, value)?,
            "lambda_r" => p.embed.lambda_r = parse_value(key, value)?,
            "epochs" => p.embed.epochs = parse_value(key, value)?,
            "negatives" => p.embed.negatives = parse_value(key, value)?,
            "lr_start" => p.embed.lr_start = parse_value(key, value)?,
            "lr_end" => p.embed.lr_end = parse_value(key, value)?,
            "subsample" => {
                p.embed.subsample = match value {
                    "off" | "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "joint" => p.embed.use_joint = parse_bool(key, value)?,
            "exact_softmax" => p.embed.exact_softmax = parse_bool(key, value)?,
            "seed" => self.set_seed(parse_value(key, value)?),
            "threads" => self.set_threads(parse_value(key, value)?),
            "temperature" => p.temperature = parse_value(key, value)?,
            "scoring" => {
                p.scoring = Scoring::from_name(value).ok_or_else(|| {
                    Error::InvalidArgument(format!("scoring: expected combined, joint or marginal, got `{value}`"))
                })?
            }
            "cnn_learning_rate" => p.cnn.learning_rate = parse_value(key, value)?,
            "batch_size" => p.cnn.batch_size = parse_value(key, value)?,
            "pretrain_epochs" => p.cnn.pretrain_epochs = parse_value(key, value)?,
            "pretrain_tolerance" => p.cnn.pretrain_tolerance = parse_value(key, value)?,
            "max_self_train_epochs" => p.cnn.max_self_train_epochs = parse_value(key, value)?,
            "change_threshold" => p.cnn.change_threshold = parse_value(key, value)?,
            "self_train" => p.skip_self_train = !parse_bool(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_kv(&mut self, text: &str) -> crate::Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: "expected key=value".into(),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> crate::Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Every setting as `key=value` lines in a fixed order; unset paths are
    /// omitted. Parsing the output yields an equal config.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (key, path) in [
            ("corpus", &self.corpus),
            ("schema", &self.schema),
            ("test", &self.test),
            ("model_dir", &self.model_dir),
        ] {
            if let Some(p) = path {
                let _ = writeln!(out, "{key}={}", p.display());
            }
        }
        out.push_str(&self.hyperparams_kv());
        out
    }

    /// Like [`RunConfig::to_kv`] without the paths.
    pub fn hyperparams_kv(&self) -> String {
        let p = &self.pipeline;
        let e = &p.embed;
        let c = &p.cnn;
        let subsample = e.subsample.map_or("off".to_string(), |t| t.to_string());
        let rows: Vec<(&str, String)> = vec![
            ("min_count", self.min_count.to_string()),
            ("dim", e.dim.to_string()),
            ("window", e.window.to_string()),
            ("lambda_g", e.lambda_g.to_string()),
            ("lambda_r", e.lambda_r.to_string()),
            ("epochs", e.epochs.to_string()),
            ("negatives", e.negatives.to_string()),
            ("lr_start", e.lr_start.to_string()),
            ("lr_end", e.lr_end.to_string()),
            ("subsample", subsample),
            ("joint", e.use_joint.to_string()),
            ("exact_softmax", e.exact_softmax.to_string()),
            ("seed", e.seed.to_string()),
            ("threads", e.threads.to_string()),
            ("temperature", p.temperature.to_string()),
            ("scoring", p.scoring.name().to_string()),
            ("cnn_learning_rate", c.learning_rate.to_string()),
            ("batch_size", c.batch_size.to_string()),
            ("pretrain_epochs", c.pretrain_epochs.to_string()),
            ("pretrain_tolerance", c.pretrain_tolerance.to_string()),
            ("max_self_train_epochs", c.max_self_train_epochs.to_string()),
            ("change_threshold", c.change_threshold.to_string()),
            ("self_train", (!p.skip_self_train).to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.min_count < 1 {
            return Err(Error::invalid("min_count must be >= 1"));
        }
        if !(self.pipeline.temperature > 0.0) {
            return Err(Error::invalid("temperature must be > 0"));
        }
        if self.pipeline.embed.seed != self.pipeline.cnn.seed || self.pipeline.embed.threads != self.pipeline.cnn.threads {
            return Err(Error::invalid("seed and threads must agree between stages"));
        }
        self.pipeline.embed.validate()?;
        self.pipeline.cnn.validate()
    }
}

#[derive(Debug, Parser)]
#[command(name = "jasen", version, about = "Weakly-supervised aspect-based sentiment analysis")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count tokens of a corpus and write `token<TAB>count` lines.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        min_count: Option<usize>,
    },
    /// Train embeddings and both classifiers and write them to the model directory.
    Train(TrainArgs),
    /// Label every line of a text file.
    Predict {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Print the terms closest to a topic (`label` or `sentiment|aspect`).
    Inspect {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        topic: String,
        #[arg(short = 'n', long, default_value_t = 5)]
        n: usize,
    },
    /// Write 2-D PCA coordinates of all topic vectors as `name<TAB>x<TAB>y`.
    ExportProj {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trained model on a `text<TAB>aspect<TAB>sentiment` file.
    Evaluate {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Retrain with keyword lists cut to each requested length and report aspect macro-F1.
    SweepKeywords {
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated keyword counts, e.g. `1,2,4`.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `key=value` file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    lambda_g: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    /// Frequent-word subsampling threshold, e.g. 1e-3.
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// combined, joint or marginal.
    #[arg(long)]
    scoring: Option<String>,
    #[arg(long)]
    cnn_learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    max_self_train_epochs: Option<usize>,
    #[arg(long)]
    change_threshold: Option<f64>,
    /// Train without joint topics or the cross regularizer.
    #[arg(long)]
    no_joint: bool,
    /// Keep the distilled classifiers without self-training.
    #[arg(long)]
    no_self_train: bool,
}

impl TrainArgs {
    /// Defaults, then the config file, then `JASEN_SEED`, then flags.
    fn resolve(&self, seed_env: Option<String>) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_kv(&read_input(path)?)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        }
        if let Some(seed) = seed_env {
            cfg.set("seed", seed.trim())
                .map_err(|e| CliError::usage(format!("{SEED_ENV}: {e}")))?;
        }
        let mut set = |key: &str, value: Option<String>| -> CliResult<()> {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(|e| CliError::usage(e.to_string()))?;
            }
            Ok(())
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        set("corpus", path(&self.corpus))?;
        set("schema", path(&self.schema))?;
        set("test", path(&self.test))?;
        set("model_dir", path(&self.model_dir))?;
        set("min_count", self.min_count.map(|v| v.to_string()))?;
        set("dim", self.dim.map(|v| v.to_string()))?;
        set("window", self.window.map(|v| v.to_string()))?;
        set("lambda_g", self.lambda_g.map(|v| v.to_string()))?;
        set("lambda_r", self.lambda_r.map(|v| v.to_string()))?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("negatives", self.negatives.map(|v| v.to_string()))?;
        set("lr_start", self.lr_start.map(|v| v.to_string()))?;
        set("lr_end", self.lr_end.map(|v| v.to_string()))?;
        set("subsample", self.subsample.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("threads", self.threads.map(|v| v.to_string()))?;
        set("temperature", self.temperature.map(|v| v.to_string()))?;
        set("scoring", self.scoring.clone())?;
        set("cnn_learning_rate", self.cnn_learning_rate.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("pretrain_epochs", self.pretrain_epochs.map(|v| v.to_string()))?;
        set("max_self_train_epochs", self.max_self_train_epochs.map(|v| v.to_string()))?;
        set("change_threshold", self.change_threshold.map(|v| v.to_string()))?;
        if self.no_joint {
            set("joint", Some("false".into()))?;
        }
        if self.no_self_train {
            set("self_train", Some("false".into()))?;
        }
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_output(p, text.as_bytes()),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError {
                    code: 1,
                    message: format!("stdout: {e}"),
                })
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::usage(format!("missing --{what} (or `{what}=` in the config file)")))
}

fn load_corpus(path: &Path) -> CliResult<Vec<String>> {
    Ok(read_input(path)?.lines().map(str::to_string).collect())
}

fn load_schema(path: &Path) -> CliResult<TopicSchema> {
    parse_schema(&read_input(path)?).map_err(|e| CliError {
        code: 1,
        message: format!("{}: {e}", path.display()),
    })
}

/// Files of a trained model directory, loaded and cross-checked.
pub struct LoadedModel {
    pub vocab: Vocabulary,
    pub schema: TopicSchema,
    pub aspect: CnnModel<f32>,
    pub sentiment: CnnModel<f32>,
    pub fallback_aspect: usize,
    pub fallback_sentiment: usize,
}

impl LoadedModel {
    pub fn classifier(&self) -> Classifier<'_, f32> {
        Classifier {
            vocab: &self.vocab,
            aspect: &self.aspect,
            sentiment: &self.sentiment,
            fallback_aspect: self.fallback_aspect,
            fallback_sentiment: self.fallback_sentiment,
        }
    }
}

fn model_file(dir: &Path, name: &str) -> CliResult<(PathBuf, Vec<u8>)> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| CliError::from(Error::io(&path, e)))?;
    Ok((path, bytes))
}

fn model_text(dir: &Path, name: &str) -> CliResult<(PathBuf, String)> {
    let (path, bytes) = model_file(dir, name)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::corrupt(&path, e))?;
    Ok((path, text))
}

pub fn load_embedding(dir: &Path) -> CliResult<EmbeddingModel<f32>> {
    let (path, text) = model_text(dir, EMBEDDING_FILE)?;
    EmbeddingModel::from_text(&text).map_err(|e| CliError::corrupt(&path, e))
}

pub fn load_classifiers(dir: &Path) -> CliResult<LoadedModel> {
    let (vpath, vtext) = model_text(dir, VOCAB_FILE)?;
    let vocab = Vocabulary::from_tsv(&vtext).map_err(|e| CliError::corrupt(&vpath, e))?;
    let (spath, stext) = model_text(dir, SCHEMA_FILE)?;
    let schema = parse_schema(&stext).map_err(|e| CliError::corrupt(&spath, e))?;
    let (apath, abytes) = model_file(dir, ASPECT_CNN_FILE)?;
    let aspect = CnnModel::<f32>::from_bytes(&abytes).map_err(|e| CliError::corrupt(&apath, e))?;
    let (sp, sbytes) = model_file(dir, SENTIMENT_CNN_FILE)?;
    let sentiment = CnnModel::<f32>::from_bytes(&sbytes).map_err(|e| CliError::corrupt(&sp, e))?;
    for (path, cnn, n) in [
        (&apath, &aspect, schema.aspects.len()),
        (&sp, &sentiment, schema.sentiments.len()),
    ] {
        if cnn.embeddings.rows() != vocab.len() || cnn.classes() != n {
            return Err(CliError::corrupt(path, "shape does not match vocabulary and schema"));
        }
    }
    let (ppath, ptext) = model_text(dir, PIPELINE_FILE)?;
    let fallback = |key: &str, labels: &[String]| -> CliResult<usize> {
        ptext
            .lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .and_then(|v| labels.iter().position(|l| l == v))
            .ok_or_else(|| CliError::corrupt(&ppath, format!("missing or unknown {key}")))
    };
    let fallback_aspect = fallback("fallback_aspect", &schema.aspects)?;
    let fallback_sentiment = fallback("fallback_sentiment", &schema.sentiments)?;
    Ok(LoadedModel {
        vocab,
        schema,
        aspect,
        sentiment,
        fallback_aspect,
        fallback_sentiment,
    })
}

fn cmd_build_vocab(corpus: &Path, out: Option<&Path>, min_count: Option<usize>) -> CliResult<()> {
    let lines = load_corpus(corpus)?;
    let tokenized: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l)).collect();
    let vocab = build_vocabulary(&tokenized, min_count.unwrap_or(DEFAULT_MIN_COUNT))?;
    info!("vocabulary: {} tokens from {} documents", vocab.len(), lines.len());
    emit(out, &vocab.to_tsv())
}

fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let corpus_path = require(&cfg.corpus, "corpus")?;
    let schema_path = require(&cfg.schema, "schema")?;
    let dir = require(&cfg.model_dir, "model-dir")?;
    let schema = load_schema(schema_path)?;
    let lines = load_corpus(corpus_path)?;
    let tokenized: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l)).collect();
    let vocab = build_vocabulary(&tokenized, cfg.min_count).map_err(|e| CliError::from(e.in_stage("vocabulary")))?;
    let docs = encode_corpus(&lines, &vocab);
    let out = run_pipeline::<f32>(&docs, &vocab, &schema, &cfg.pipeline)?;

    fs::create_dir_all(dir).map_err(|e| CliError::from(Error::io(dir, e)))?;
    write_output(&dir.join(EMBEDDING_FILE), out.embedding.model.to_text().as_bytes())?;
    write_output(&dir.join(ASPECT_CNN_FILE), &out.aspect.cnn.to_bytes())?;
    write_output(&dir.join(SENTIMENT_CNN_FILE), &out.sentiment.cnn.to_bytes())?;
    write_output(&dir.join(VOCAB_FILE), vocab.to_tsv().as_bytes())?;
    write_output(&dir.join(SCHEMA_FILE), schema.to_schema_text().as_bytes())?;
    let pipeline = format!(
        "fallback_aspect={}\nfallback_sentiment={}\n{}",
        schema.aspects[out.aspect.fallback_label],
        schema.sentiments[out.sentiment.fallback_label],
        cfg.hyperparams_kv()
    );
    write_output(&dir.join(PIPELINE_FILE), pipeline.as_bytes())?;
    let mut log_text = out.log.join("\n");
    log_text.push('\n');
    write_output(&dir.join(LOG_FILE), log_text.as_bytes())?;
    println!(
        "vocabulary={} documents={} aspect_self_train_epochs={} sentiment_self_train_epochs={} model_dir={}",
        vocab.len(),
        docs.len(),
        out.aspect.self_train.epochs.len(),
        out.sentiment.self_train.epochs.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_predict(dir: &Path, input: &Path, output: Option<&Path>, threads: usize) -> CliResult<()> {
    if threads == 0 {
        return Err(CliError::usage("threads must be >= 1"));
    }
    let text = read_input(input)?;
    let model = load_classifiers(dir)?;
    let lines: Vec<&str> = text.lines().collect();
    let labeled = model.classifier().classify_all(&lines, threads);
    let mut out = String::new();
    for (line, l) in lines.iter().zip(&labeled) {
        let _ = writeln!(
            out,
            "{line}\t{}\t{}\t{:.6}\t{:.6}",
            model.schema.sentiments[l.sentiment],
            model.schema.aspects[l.aspect],
            l.sentiment_probs[l.sentiment],
            l.aspect_probs[l.aspect]
        );
    }
    match output {
        Some(p) => write_output(p, out.as_bytes()),
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError {
                code: 1,
                message: format!("stdout: {e}"),
            })
        }
    }
}

fn cmd_inspect(dir: &Path, topic: &str, n: usize) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::usage("-n must be >= 1"));
    }
    let model = load_embedding(dir)?;
    let Some(t) = model.find_topic(topic) else {
        let names: Vec<String> = model.all_topics().into_iter().map(|t| model.topic_name(t)).collect();
        return Err(CliError::usage(format!(
            "unknown topic `{topic}`; valid names: {}",
            names.join(", ")
        )));
    };
    let mut out = String::new();
    for (id, score) in top_terms(&model, t, n) {
        let _ = writeln!(out, "{}\t{score:.6}", model.words[id]);
    }
    emit(None, &out)
}

fn cmd_export_proj(dir: &Path, out: Option<&Path>) -> CliResult<()> {
    let model = load_embedding(dir)?;
    let proj = project_topics_2d(&model)?;
    emit(out, &proj.to_tsv())
}

fn cmd_evaluate(dir: &Path, test: &Path, threads: usize) -> CliResult<()> {
    if threads == 0 {
        return Err(CliError::usage("threads must be >= 1"));
    }
    let text = read_input(test)?;
    let model = load_classifiers(dir)?;
    let examples = parse_test_set(&text, &model.schema).map_err(|e| CliError {
        code: 1,
        message: format!("{}: {e}", test.display()),
    })?;
    let (aspect, sentiment) = evaluate_pipeline(&examples, &model.classifier(), threads);
    let mut out = metrics_table(&[("aspect", aspect), ("sentiment", sentiment)]);
    out.push('\n');
    let _ = writeln!(out, "examples={}", examples.len());
    out.push_str(&aspect.to_kv("aspect"));
    out.push_str(&sentiment.to_kv("sentiment"));
    emit(None, &out)
}

fn cmd_sweep(cfg: &RunConfig, ks: &[usize]) -> CliResult<()> {
    let corpus = load_corpus(require(&cfg.corpus, "corpus")?)?;
    let schema = load_schema(require(&cfg.schema, "schema")?)?;
    let test_path = require(&cfg.test, "test")?;
    let test = parse_test_set(&read_input(test_path)?, &schema).map_err(|e| CliError {
        code: 1,
        message: format!("{}: {e}", test_path.display()),
    })?;
    let rows = keyword_sweep::<f32, _>(&corpus, &test, &schema, ks, cfg.min_count, &cfg.pipeline)?;
    let mut out = sweep_table(&rows);
    out.push('\n');
    for r in &rows {
        let _ = writeln!(out, "k={} aspect_macro_f1={:.6}", r.k, r.aspect.macro_f1);
    }
    emit(None, &out)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let seed_env = || std::env::var(SEED_ENV).ok();
    match cli.command {
        Command::BuildVocab { corpus, out, min_count } => cmd_build_vocab(&corpus, out.as_deref(), min_count),
        Command::Train(args) => cmd_train(&args.resolve(seed_env())?),
        Command::Predict {
            model_dir,
            input,
            output,
            threads,
        } => cmd_predict(&model_dir, &input, output.as_deref(), threads),
        Command::Inspect { model_dir, topic, n } => cmd_inspect(&model_dir, &topic, n),
        Command::ExportProj { model_dir, out } => cmd_export_proj(&model_dir, out.as_deref()),
        Command::Evaluate {
            model_dir,
            test,
            threads,
        } => cmd_evaluate(&model_dir, &test, threads),
        Command::SweepKeywords { train, k } => cmd_sweep(&train.resolve(seed_env())?, &k),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
