//! Headword-based comparison of detected and gold mentions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::mentions::{head_of, MentionError, Span, SpanMention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEval {
    pub recall: f64,
    pub precision: f64,
    pub density_pred: f64,
    pub density_gold: f64,
    pub matched: usize,
    pub pred_total: usize,
    pub gold_total: usize,
    /// Set when there are no gold mentions; recall is then reported as 1.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub recall_undefined: bool,
    /// Set when there are no predicted mentions; precision is then 1.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub precision_undefined: bool,
}

impl DetectorEval {
    pub fn from_counts(matched: usize, pred_total: usize, gold_total: usize, tokens: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let density = |n: usize| if tokens == 0 { 0.0 } else { n as f64 / tokens as f64 };
        DetectorEval {
            recall: ratio(matched, gold_total),
            precision: ratio(matched, pred_total),
            density_pred: density(pred_total),
            density_gold: density(gold_total),
            matched,
            pred_total,
            gold_total,
            recall_undefined: gold_total == 0,
            precision_undefined: pred_total == 0,
        }
    }
}

/// Number of one-to-one head matches between two mention lists: each head
/// position pairs at most `min(pred count, gold count)` times.
pub fn count_head_matches<'a>(
    pred: impl IntoIterator<Item = &'a SpanMention>,
    gold: impl IntoIterator<Item = &'a SpanMention>,
) -> usize {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for m in pred {
        counts.entry(m.head).or_default().0 += 1;
    }
    for m in gold {
        counts.entry(m.head).or_default().1 += 1;
    }
    counts.values().map(|&(p, g)| p.min(g)).sum()
}

/// Scores predicted mentions against gold mentions of the same document.
pub fn eval_detector(pred: &[SpanMention], gold: &[SpanMention], doc: &Document) -> DetectorEval {
    let matched = count_head_matches(pred, gold);
    DetectorEval::from_counts(matched, pred.len(), gold.len(), doc.token_count())
}

/// Gold mention as read from an annotation file; the head may be omitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldMention {
    pub span: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
}

/// Fills in missing gold heads with [`head_of`] over the containing sentence.
pub fn resolve_gold_heads(gold: &[GoldMention], doc: &Document) -> Result<Vec<SpanMention>, MentionError> {
    gold.iter()
        .map(|g| {
            let head = match g.head {
                Some(h) => h,
                None => {
                    let sentence = doc.sentence_of(g.span.start).ok_or(MentionError::OutsideSentence {
                        start: g.span.start,
                        end: g.span.end,
                        sent_id: format!("<none in {}>", doc.doc_id),
                    })?;
                    head_of(g.span, sentence)?
                }
            };
            Ok(SpanMention { span: g.span, head })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEval {
    pub doc_id: String,
    #[serde(flatten)]
    pub eval: DetectorEval,
}

/// Corpus-level report: pooled counts plus a per-document breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    #[serde(flatten)]
    pub overall: DetectorEval,
    pub documents: Vec<DocumentEval>,
}

impl DetectorReport {
    pub fn from_documents(documents: Vec<DocumentEval>, total_tokens: usize) -> Self {
        let (matched, pred, gold) = documents.iter().fold((0, 0, 0), |(m, p, g), d| {
            (m + d.eval.matched, p + d.eval.pred_total, g + d.eval.gold_total)
        });
        DetectorReport {
            overall: DetectorEval::from_counts(matched, pred, gold, total_tokens),
            documents,
        }
    }
}
