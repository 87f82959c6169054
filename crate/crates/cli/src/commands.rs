use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use corefkit::annotation::Clustering;
use corefkit::corpus::{parse_conllu_named, Corpus, SplitConfig};
use corefkit::reports::{self, GoldMentions, ScoreRow};
use corefkit::tutorial::{evaluate_step, StepOutcome, TutorialScript};
use corefkit_service::{Store, StoreConfig};
use serde::Serialize;

use crate::args::*;
use crate::io::{files_with_ext, invalid, read_clusterings, read_json, read_text, to_pretty, write_out};

/// Tutorial used when a store is created without one.
pub const DEFAULT_TUTORIAL: &str = include_str!("../assets/tutorial.json");

fn split_config(flags: &SplitFlags) -> Result<SplitConfig> {
    let cfg = SplitConfig {
        target_tokens: flags.target_tokens,
        min_tail_tokens: flags.min_tail,
    };
    cfg.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(cfg)
}

fn resplit(corpus: &mut Corpus, cfg: &SplitConfig) -> Result<()> {
    for w in corpus.resplit(cfg).map_err(|e| invalid(e.to_string()))? {
        log::warn!(
            "{} sentence {} has {} tokens and becomes an oversized passage",
            w.doc_id,
            w.sent_id,
            w.tokens
        );
    }
    Ok(())
}

fn load_corpus(path: &std::path::Path) -> Result<Corpus> {
    read_json(path)
}

/// Parses every input, in path order, into one split corpus.
pub fn ingest(conllu: &[std::path::PathBuf], split: &SplitConfig) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut seen = BTreeSet::new();
    for input in conllu {
        for file in files_with_ext(input, "conllu")? {
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("doc");
            let docs = parse_conllu_named(&read_text(&file)?, stem)
                .map_err(|e| invalid(format!("{}: {e}", file.display())))?;
            for doc in docs {
                if !seen.insert(doc.doc_id.clone()) {
                    return Err(invalid(format!("duplicate document id {} in {}", doc.doc_id, file.display())));
                }
                corpus.documents.push(doc);
            }
        }
    }
    resplit(&mut corpus, split)?;
    Ok(corpus)
}

fn write_json<T: Serialize>(out: &std::path::Path, value: &T) -> Result<()> {
    write_out(out, &to_pretty(value)?)
}

fn score_table(rows: &[ScoreRow]) -> String {
    let mut out = format!(
        "{:<24} {:>4} {:>9} {:>9} {:>9}\n",
        "passage/group", "tau", "P", "R", "F1"
    );
    for r in rows {
        let label = r.passage_id.as_deref().or(r.group.as_deref()).unwrap_or("");
        let tau = r.tau.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<24} {:>4} {:>9.4} {:>9.4} {:>9.4}\n",
            label, tau, r.precision, r.recall, r.f1
        ));
    }
    out
}

fn score_csv(rows: &[ScoreRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["passage_id", "group", "tau", "singleton_mode", "precision", "recall", "f1"])?;
    for r in rows {
        w.write_record([
            r.passage_id.clone().unwrap_or_default(),
            r.group.clone().unwrap_or_default(),
            r.tau.map(|t| t.to_string()).unwrap_or_default(),
            r.singleton_mode.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn score_rows(args: &ScoreArgs) -> Result<Vec<ScoreRow>> {
    let keys = read_clusterings(&args.key)?;
    let corpus = args.corpus.as_deref().map(load_corpus).transpose()?;
    let rows = if let Some(annotations) = &args.annotations {
        let anns = read_clusterings(annotations)?;
        reports::tau_sweep(&keys, &anns, args.taus.iter().copied(), args.singletons, corpus.as_ref())
    } else {
        let response = args.response.as_deref().expect("clap requires response or annotations");
        let responses = read_clusterings(response)?;
        let tau = responses_tau(response)?;
        reports::score_passages(&keys, &responses, args.singletons, tau, |pid| {
            corpus.as_ref().and_then(|c| reports::passage_domain(c, pid))
        })
    };
    rows.map_err(|e| invalid(e.to_string()))
}

/// The shared `tau` of an `aggregate` output, if it has one.
fn responses_tau(path: &std::path::Path) -> Result<Option<u32>> {
    let mut taus = BTreeSet::new();
    for file in files_with_ext(path, "json")? {
        let value: serde_json::Value = read_json(&file)?;
        let items = match value {
            serde_json::Value::Array(items) => items,
            other => vec![other],
        };
        for item in items {
            taus.insert(item.get("tau").and_then(|t| t.as_u64()));
        }
    }
    Ok(match taus.into_iter().collect::<Vec<_>>().as_slice() {
        [Some(t)] => Some(*t as u32),
        _ => None,
    })
}

#[derive(Debug, Serialize)]
pub struct TutorialCheck {
    pub steps: usize,
    pub screening_threshold: f64,
    pub outcomes: Vec<StepOutcome>,
}

pub fn tutorial_check(script: &TutorialScript, answers: Option<Vec<Vec<Vec<String>>>>) -> Result<TutorialCheck> {
    script.validate().map_err(|e| invalid(e.to_string()))?;
    let answers = answers.unwrap_or_else(|| script.steps.iter().map(|s| s.gold.clone()).collect());
    if answers.len() != script.steps.len() {
        return Err(invalid(format!(
            "{} answers for {} steps",
            answers.len(),
            script.steps.len()
        )));
    }
    let outcomes = answers
        .into_iter()
        .enumerate()
        .map(|(i, clusters)| {
            evaluate_step(script, i, &Clustering::new(format!("tutorial-{i}"), "check", clusters))
                .map_err(|e| invalid(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TutorialCheck {
        steps: script.steps.len(),
        screening_threshold: script.screening_threshold,
        outcomes,
    })
}

fn serve(args: &ServeArgs) -> Result<()> {
    if !args.store.join("corpus.json").exists() {
        let corpus_path = args
            .init_corpus
            .as_deref()
            .ok_or_else(|| invalid(format!("{} is not a store; pass --init-corpus to create one", args.store.display())))?;
        let corpus = load_corpus(corpus_path)?;
        let tutorial: TutorialScript = match &args.tutorial {
            Some(p) => read_json(p)?,
            None => serde_json::from_str(DEFAULT_TUTORIAL)?,
        };
        let gold = args.gold.as_deref().map(read_clusterings).transpose()?.unwrap_or_default();
        Store::init(&args.store, &corpus, &tutorial, &gold).map_err(|e| invalid(e.to_string()))?;
        log::info!("created store at {}", args.store.display());
    }
    let config = StoreConfig {
        target_annotations: args.target_annotations,
        lease_ttl: Duration::from_secs(args.lease_minutes * 60),
        admin_token: args.admin_token.clone(),
    };
    let store = Store::open(&args.store, config).map_err(|e| invalid(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(corefkit_service::api::serve(Arc::new(store), args.bind, args.ui_dir.clone()))?;
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(seed) = cli.seed {
        log::debug!("--seed {seed} has no effect on this subcommand");
    }
    match cli.command {
        Command::Ingest(a) => {
            let corpus = ingest(&a.conllu, &split_config(&a.split)?)?;
            write_json(&a.out, &corpus)
        }
        Command::Detect(a) => {
            let mut corpus = load_corpus(&a.corpus)?;
            reports::detect_corpus(&mut corpus);
            write_json(a.out.as_deref().unwrap_or(&a.corpus), &corpus)
        }
        Command::Split(a) => {
            let cfg = split_config(&a.split)?;
            let mut corpus = load_corpus(&a.corpus)?;
            resplit(&mut corpus, &cfg)?;
            write_json(a.out.as_deref().unwrap_or(&a.corpus), &corpus)
        }
        Command::EvalDetector(a) => {
            let corpus = load_corpus(&a.corpus)?;
            let gold: GoldMentions = read_json(&a.gold)?;
            let report = reports::detector_report(&corpus, &gold).map_err(|e| invalid(e.to_string()))?;
            write_json(&a.out, &report)
        }
        Command::Aggregate(a) => {
            let anns = read_clusterings(&a.annotations)?;
            let corpus = a.corpus.as_deref().map(load_corpus).transpose()?;
            let aggs = reports::aggregate_passages(&anns, a.tau, corpus.as_ref()).map_err(|e| invalid(e.to_string()))?;
            write_json(&a.out, &aggs)
        }
        Command::Score(a) => {
            let rows = score_rows(&a)?;
            let text = match a.format {
                Format::Json => to_pretty(&rows)?,
                Format::Csv => score_csv(&rows)?,
                Format::Table => score_table(&rows),
            };
            write_out(&a.out, &text)
        }
        Command::Iaa(a) => {
            let anns = read_clusterings(&a.annotations)?;
            let corpus = a.corpus.as_deref().map(load_corpus).transpose()?;
            let report = reports::iaa_by_domain(&anns, a.singletons, corpus.as_ref()).map_err(|e| invalid(e.to_string()))?;
            write_json(&a.out, &report)
        }
        Command::Serve(a) => serve(&a),
        Command::TutorialCheck(a) => {
            let script: TutorialScript = read_json(&a.tutorial)?;
            let answers = a.answers.as_deref().map(read_json).transpose()?;
            let check = tutorial_check(&script, answers)?;
            write_json(&a.out, &check)
        }
    }
}
