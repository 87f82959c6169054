use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use corefkit::scoring::SingletonMode;
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(name = "corefkit", version, about = "Coreference annotation pipeline: ingest, detect, aggregate, score, serve")]
pub struct Cli {
    /// JSON file of default flag values, keyed by flag name. Flags given on
    /// the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Accepted for reproducible invocations; no subcommand is randomized.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse CoNLL-U files into a corpus file and split it into passages.
    Ingest(IngestArgs),
    /// Detect mentions in every sentence and attach them to passages.
    Detect(DetectArgs),
    /// Re-split documents into passages.
    Split(SplitArgs),
    /// Compare detected mentions with gold mentions by headword.
    EvalDetector(EvalDetectorArgs),
    /// Merge annotator clusterings by vote threshold.
    Aggregate(AggregateArgs),
    /// B3 of responses against a key, or a threshold sweep of aggregates.
    Score(ScoreArgs),
    /// Pairwise inter-annotator agreement by domain.
    Iaa(IaaArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Validate a tutorial script and check its answers.
    TutorialCheck(TutorialCheckArgs),
}

#[derive(Debug, Args)]
pub struct SplitFlags {
    #[arg(long, default_value_t = 175)]
    pub target_tokens: usize,
    #[arg(long, default_value_t = 50)]
    pub min_tail: usize,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CoNLL-U file or directory of *.conllu files; repeatable.
    #[arg(long, required = true, num_args = 1..)]
    pub conllu: Vec<PathBuf>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitFlags,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to rewriting the input corpus.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to rewriting the input corpus.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitFlags,
}

#[derive(Debug, Args)]
pub struct EvalDetectorArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Gold mentions: {"documents": [{"doc_id", "mentions": [{"span", "head"?}]}]}
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Clustering file or directory of them.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub tau: u32,
    /// Corpus used to order mentions within clusters.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Gold clustering file or directory.
    #[arg(long)]
    pub key: PathBuf,
    /// Clusterings to score, one per passage (e.g. `aggregate` output).
    #[arg(long, conflicts_with = "annotations", required_unless_present = "annotations")]
    pub response: Option<PathBuf>,
    /// Raw annotations: aggregate at each `--taus` value and score.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5", requires = "annotations",
          value_parser = clap::value_parser!(u32).range(1..))]
    pub taus: Vec<u32>,
    #[arg(long, value_parser = parse_mode, default_value = "include")]
    pub singletons: SingletonMode,
    /// Corpus used for per-domain rows and mention order.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IaaArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_parser = parse_mode, default_value = "exclude")]
    pub singletons: SingletonMode,
    /// Corpus used to group passages by domain.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "COREFKIT_STORE")]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Create the store from this corpus if it does not exist yet.
    #[arg(long)]
    pub init_corpus: Option<PathBuf>,
    /// Tutorial script for a new store; a built-in script is used otherwise.
    #[arg(long, requires = "init_corpus")]
    pub tutorial: Option<PathBuf>,
    /// Gold clusterings for a new store.
    #[arg(long, requires = "init_corpus")]
    pub gold: Option<PathBuf>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    pub target_annotations: u32,
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
    pub lease_minutes: u64,
    #[arg(long, env = "COREFKIT_ADMIN_TOKEN", hide_env_values = true)]
    pub admin_token: Option<String>,
    /// Directory of static files for the browser UI.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TutorialCheckArgs {
    #[arg(long)]
    pub tutorial: PathBuf,
    /// JSON array with one clustering (list of clusters) per step. Without
    /// it, each step's own gold is replayed.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> Result<SingletonMode, String> {
    s.parse()
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn config_flags(value: &Value) -> Result<Vec<(String, Vec<String>)>, String> {
    let obj = value.as_object().ok_or("config file must hold a JSON object")?;
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(format!("unsupported config value {other}")),
    };
    obj.iter()
        .map(|(k, v)| {
            let values = match v {
                Value::Array(items) => items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?,
                other => vec![scalar(other)?],
            };
            Ok((k.replace('_', "-"), values))
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ArgsError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
}

/// Parses argv, filling flags absent from the command line from `--config`.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, ArgsError> {
    let Some(path) = config_path(&argv) else {
        return Ok(Cli::try_parse_from(argv)?);
    };
    // Lenient first pass: required flags may still come from the config.
    let first = Cli::command().ignore_errors(true).try_get_matches_from(&argv)?;
    let text = std::fs::read_to_string(&path).map_err(|source| ArgsError::ConfigIo {
        path: path.clone(),
        source,
    })?;
    let bad = |message: String| ArgsError::Config {
        path: path.clone(),
        message,
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let flags = config_flags(&value).map_err(bad)?;

    let Some((sub_name, sub_matches)) = first.subcommand() else {
        return Ok(Cli::try_parse_from(argv)?);
    };
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(sub_name).expect("parsed subcommand exists");
    let mut extra: Vec<OsString> = Vec::new();
    for (flag, values) in flags {
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(flag.as_str())) else {
            log::warn!("config key {flag:?} does not apply to `{sub_name}`");
            continue;
        };
        let id = arg.get_id().as_str();
        if matches!(
            sub_matches.value_source(id),
            Some(ValueSource::CommandLine) | Some(ValueSource::EnvVariable)
        ) {
            continue;
        }
        let takes_value = arg.get_num_args().is_none_or(|n| n.takes_values());
        if !takes_value {
            if values.iter().any(|v| v == "true") {
                extra.push(format!("--{flag}").into());
            }
            continue;
        }
        for v in values {
            extra.push(format!("--{flag}").into());
            extra.push(v.into());
        }
    }
    let mut merged = argv;
    merged.extend(extra);
    Ok(Cli::try_parse_from(merged)?)
}
