//! Corpus-level computations shared by the CLI and the service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotation::{aggregate, count_votes, AggregateClustering, AggregationConfig, AnnotationError, Clustering};
use crate::corpus::Corpus;
use crate::mention_eval::{eval_detector, resolve_gold_heads, DetectorReport, DocumentEval, GoldMention};
use crate::mentions::{detect_mentions, MentionError};
use crate::scoring::{b3_counts, pairwise_iaa, B3Counts, IaaReport, ScoringError, SingletonMode};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Mention(#[from] MentionError),
    #[error("passage {passage_id}: {source}")]
    Passage {
        passage_id: String,
        #[source]
        source: Box<ReportError>,
    },
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error("no gold clustering for passage {0}")]
    MissingGold(String),
}

impl ReportError {
    fn in_passage(passage_id: &str, err: impl Into<ReportError>) -> Self {
        ReportError::Passage {
            passage_id: passage_id.to_string(),
            source: Box::new(err.into()),
        }
    }
}

/// Runs mention detection over every sentence and refreshes passage
/// mentions.
pub fn detect_corpus(corpus: &mut Corpus) {
    for doc in &mut corpus.documents {
        doc.mentions = doc
            .sentences
            .iter()
            .flat_map(|s| detect_mentions(s).into_vec())
            .collect();
    }
    corpus.attach_mentions();
}

/// Groups annotations by passage, preserving input order within a passage.
pub fn by_passage(annotations: &[Clustering]) -> BTreeMap<String, Vec<Clustering>> {
    let mut out: BTreeMap<String, Vec<Clustering>> = BTreeMap::new();
    for ann in annotations {
        out.entry(ann.passage_id.clone()).or_default().push(ann.clone());
    }
    out
}

/// Aggregates each passage's annotations at threshold `tau`. Mention order
/// comes from the corpus when the passage is known there.
pub fn aggregate_passages(
    annotations: &[Clustering],
    tau: u32,
    corpus: Option<&Corpus>,
) -> Result<Vec<AggregateClustering>, ReportError> {
    by_passage(annotations)
        .into_iter()
        .map(|(passage_id, anns)| {
            let votes = count_votes(&anns).map_err(|e| ReportError::in_passage(&passage_id, e))?;
            let order = corpus
                .and_then(|c| c.passage(&passage_id))
                .map(|p| p.mention_ids())
                .filter(|ids| ids.len() == votes.mention_ids.len())
                .unwrap_or_else(|| votes.mention_ids.clone());
            aggregate(&votes, AggregationConfig { tau }, &order).map_err(|e| ReportError::in_passage(&passage_id, e))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub singleton_mode: SingletonMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<u32>,
}

impl ScoreRow {
    fn new(passage_id: Option<String>, group: Option<String>, counts: B3Counts, mode: SingletonMode, tau: Option<u32>) -> Self {
        let s = counts.score(mode);
        ScoreRow {
            passage_id,
            group,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            singleton_mode: mode,
            tau,
        }
    }
}

/// Label used for the pooled row of a score report.
pub const ALL_GROUP: &str = "all";

/// Scores each response against the key for the same passage (key = gold),
/// one row per passage followed by a pooled row per group and overall.
pub fn score_passages(
    keys: &[Clustering],
    responses: &[Clustering],
    mode: SingletonMode,
    tau: Option<u32>,
    group_of: impl Fn(&str) -> Option<String>,
) -> Result<Vec<ScoreRow>, ReportError> {
    let responses: BTreeMap<&str, &Clustering> = responses.iter().map(|r| (r.passage_id.as_str(), r)).collect();
    let mut rows = Vec::new();
    let mut total = B3Counts::default();
    let mut groups: BTreeMap<String, B3Counts> = BTreeMap::new();
    let mut keys: Vec<&Clustering> = keys.iter().collect();
    keys.sort_by(|a, b| a.passage_id.cmp(&b.passage_id));
    for key in keys {
        let response = responses
            .get(key.passage_id.as_str())
            .ok_or_else(|| ScoringError::MissingResponse(key.passage_id.clone()))?;
        let counts = b3_counts(key, response, mode).map_err(|e| ReportError::in_passage(&key.passage_id, e))?;
        rows.push(ScoreRow::new(Some(key.passage_id.clone()), None, counts, mode, tau));
        total += counts;
        if let Some(group) = group_of(&key.passage_id) {
            *groups.entry(group).or_default() += counts;
        }
    }
    for (group, counts) in groups {
        rows.push(ScoreRow::new(None, Some(group), counts, mode, tau));
    }
    rows.push(ScoreRow::new(None, Some(ALL_GROUP.into()), total, mode, tau));
    Ok(rows)
}

/// Pooled B3 of the aggregate against gold for each `tau`. Passages with
/// fewer than `tau` annotations are left out of that row.
pub fn tau_sweep(
    gold: &[Clustering],
    annotations: &[Clustering],
    taus: impl IntoIterator<Item = u32>,
    mode: SingletonMode,
    corpus: Option<&Corpus>,
) -> Result<Vec<ScoreRow>, ReportError> {
    let gold: BTreeMap<&str, &Clustering> = gold.iter().map(|g| (g.passage_id.as_str(), g)).collect();
    let grouped = by_passage(annotations);
    for passage_id in grouped.keys() {
        if !gold.contains_key(passage_id.as_str()) {
            return Err(ReportError::MissingGold(passage_id.clone()));
        }
    }
    let mut rows = Vec::new();
    for tau in taus {
        let mut total = B3Counts::default();
        for (passage_id, anns) in &grouped {
            if (anns.len() as u32) < tau {
                continue;
            }
            let agg = aggregate_passages(anns, tau, corpus)?.remove(0);
            let key = gold[passage_id.as_str()];
            total += b3_counts(key, &agg.to_clustering(), mode).map_err(|e| ReportError::in_passage(passage_id, e))?;
        }
        rows.push(ScoreRow::new(None, Some(ALL_GROUP.into()), total, mode, Some(tau)));
    }
    Ok(rows)
}

/// Domain of the document a passage belongs to.
pub fn passage_domain(corpus: &Corpus, passage_id: &str) -> Option<String> {
    let passage = corpus.passage(passage_id)?;
    Some(corpus.document(&passage.doc_id)?.domain.clone())
}

/// Inter-annotator agreement grouped by document domain (or a single
/// group when no corpus is given).
pub fn iaa_by_domain(annotations: &[Clustering], mode: SingletonMode, corpus: Option<&Corpus>) -> Result<IaaReport, ReportError> {
    Ok(pairwise_iaa(annotations, mode, |pid| {
        corpus
            .and_then(|c| passage_domain(c, pid))
            .unwrap_or_else(|| ALL_GROUP.to_string())
    })?)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldDocumentMentions {
    pub doc_id: String,
    pub mentions: Vec<GoldMention>,
}

/// Gold mention file: `{"documents": [{"doc_id", "mentions": [{"span", "head"?}]}]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldMentions {
    pub documents: Vec<GoldDocumentMentions>,
}

/// Compares each document's detected mentions with gold by headword.
pub fn detector_report(corpus: &Corpus, gold: &GoldMentions) -> Result<DetectorReport, ReportError> {
    let mut docs = Vec::new();
    let mut tokens = 0;
    for g in &gold.documents {
        let doc = corpus
            .document(&g.doc_id)
            .ok_or_else(|| ReportError::UnknownDocument(g.doc_id.clone()))?;
        let gold_mentions = resolve_gold_heads(&g.mentions, doc)?;
        tokens += doc.token_count();
        docs.push(DocumentEval {
            doc_id: doc.doc_id.clone(),
            eval: eval_detector(&doc.mentions, &gold_mentions, doc),
        });
    }
    Ok(DetectorReport::from_documents(docs, tokens))
}
