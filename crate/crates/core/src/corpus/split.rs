//! Greedy splitting of documents into passages of complete sentences.

use serde::{Deserialize, Serialize};

use super::{passage_id, CorpusError, Document, Passage};

/// A sentence longer than this multiple of the target is reported.
const OVERSIZED_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub target_tokens: usize,
    pub min_tail_tokens: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            target_tokens: 175,
            min_tail_tokens: 50,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.min_tail_tokens == 0 || self.target_tokens <= self.min_tail_tokens {
            return Err(CorpusError::Config(format!(
                "need target_tokens > min_tail_tokens > 0, got {} and {}",
                self.target_tokens, self.min_tail_tokens
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitWarning {
    pub doc_id: String,
    pub sent_id: String,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub passages: Vec<Passage>,
    pub warnings: Vec<SplitWarning>,
}

/// Accumulates whole sentences and closes a passage at the first sentence
/// boundary where it holds at least `target_tokens`. A trailing passage
/// shorter than `min_tail_tokens` is merged into the one before it.
///
/// Passages carry no mentions; see [`super::Corpus::attach_mentions`].
pub fn split_passages(doc: &Document, cfg: &SplitConfig) -> Result<Split, CorpusError> {
    cfg.validate()?;
    if doc.sentences.is_empty() || doc.token_count() == 0 {
        return Err(CorpusError::EmptyDocument(doc.doc_id.clone()));
    }

    let mut warnings = Vec::new();
    // (first, last, tokens)
    let mut ranges: Vec<(usize, usize, usize)> = Vec::new();
    let mut open: Option<(usize, usize)> = None;

    for (i, sentence) in doc.sentences.iter().enumerate() {
        let len = sentence.len();
        if len > OVERSIZED_FACTOR * cfg.target_tokens {
            log::warn!(
                "document {} sentence {} has {} tokens, over {}x the passage target",
                doc.doc_id,
                sentence.sent_id,
                len,
                OVERSIZED_FACTOR
            );
            warnings.push(SplitWarning {
                doc_id: doc.doc_id.clone(),
                sent_id: sentence.sent_id.clone(),
                tokens: len,
            });
        }
        let (first, count) = open.map_or((i, len), |(first, count)| (first, count + len));
        if count >= cfg.target_tokens {
            ranges.push((first, i, count));
            open = None;
        } else {
            open = Some((first, count));
        }
    }

    if let Some((first, count)) = open {
        let last = doc.sentences.len() - 1;
        match ranges.last_mut() {
            Some(prev) if count < cfg.min_tail_tokens => {
                prev.1 = last;
                prev.2 += count;
            }
            _ => ranges.push((first, last, count)),
        }
    }

    let passages = ranges
        .into_iter()
        .enumerate()
        .map(|(k, (first, last, token_count))| Passage {
            passage_id: passage_id(&doc.doc_id, k),
            doc_id: doc.doc_id.clone(),
            sentence_range: [first, last],
            token_count,
            mentions: Vec::new(),
        })
        .collect();
    Ok(Split { passages, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, Token, Upos};
    use proptest::prelude::*;

    fn doc_with_lengths(lengths: &[usize]) -> Document {
        let mut offset = 0;
        let sentences = lengths
            .iter()
            .enumerate()
            .map(|(k, &len)| Sentence {
                sent_id: format!("s{k}"),
                tokens: (0..len)
                    .map(|i| {
                        offset += 1;
                        Token {
                            index: i as u32 + 1,
                            surface: "w".into(),
                            lemma: None,
                            upos: Upos::X,
                            head: if i == 0 { 0 } else { 1 },
                            deprel: if i == 0 { "root".into() } else { "dep".into() },
                            doc_offset: offset - 1,
                        }
                    })
                    .collect(),
            })
            .collect();
        Document {
            doc_id: "d".into(),
            domain: "unknown".into(),
            sentences,
            mentions: Vec::new(),
        }
    }

    fn sizes(split: &Split) -> Vec<usize> {
        split.passages.iter().map(|p| p.token_count).collect()
    }

    #[test]
    fn tail_below_minimum_merges_back() {
        let split = split_passages(&doc_with_lengths(&[80, 70, 60, 40]), &SplitConfig::default()).unwrap();
        assert_eq!(sizes(&split), [250]);
        assert_eq!(split.passages[0].sentence_range, [0, 3]);
    }

    #[test]
    fn exact_fit() {
        let split = split_passages(&doc_with_lengths(&[175]), &SplitConfig::default()).unwrap();
        assert_eq!(sizes(&split), [175]);
    }

    #[test]
    fn tail_above_minimum_is_kept() {
        let split = split_passages(&doc_with_lengths(&[100, 100, 100]), &SplitConfig::default()).unwrap();
        assert_eq!(sizes(&split), [200, 100]);
        assert_eq!(split.passages[1].sentence_range, [2, 2]);
        assert_eq!(split.passages[1].passage_id, "d.p001");
    }

    #[test]
    fn short_document_is_a_single_passage() {
        let split = split_passages(&doc_with_lengths(&[10, 5]), &SplitConfig::default()).unwrap();
        assert_eq!(sizes(&split), [15]);
    }

    #[test]
    fn oversized_sentence_warns_but_is_emitted() {
        let split = split_passages(&doc_with_lengths(&[10, 800, 20]), &SplitConfig::default()).unwrap();
        assert_eq!(split.warnings.len(), 1);
        assert_eq!(split.warnings[0].sent_id, "s1");
        assert_eq!(sizes(&split), [830]);
    }

    #[test]
    fn empty_document_is_an_error() {
        let err = split_passages(&doc_with_lengths(&[]), &SplitConfig::default()).unwrap_err();
        assert_eq!(err, CorpusError::EmptyDocument("d".into()));
    }

    #[test]
    fn config_is_validated() {
        let bad = SplitConfig { target_tokens: 50, min_tail_tokens: 50 };
        assert!(split_passages(&doc_with_lengths(&[3]), &bad).is_err());
    }

    proptest! {
        #[test]
        fn passages_tile_the_document(
            lengths in proptest::collection::vec(1usize..120, 1..40),
            target in 20usize..200,
        ) {
            let cfg = SplitConfig { target_tokens: target, min_tail_tokens: target / 4 + 1 };
            prop_assume!(cfg.validate().is_ok());
            let doc = doc_with_lengths(&lengths);
            let split = split_passages(&doc, &cfg).unwrap();
            let mut next = 0;
            for p in &split.passages {
                prop_assert_eq!(p.sentence_range[0], next);
                next = p.sentence_range[1] + 1;
                let sum: usize = lengths[p.sentence_range[0]..=p.sentence_range[1]].iter().sum();
                prop_assert_eq!(p.token_count, sum);
            }
            prop_assert_eq!(next, lengths.len());

            let max_len = *lengths.iter().max().unwrap();
            let n = split.passages.len();
            for (k, p) in split.passages.iter().enumerate() {
                if k + 1 < n {
                    prop_assert!(p.token_count >= target);
                    prop_assert!(p.token_count < target + max_len);
                } else if n > 1 {
                    // the last passage may hold a merged tail
                    prop_assert!(p.token_count >= cfg.min_tail_tokens);
                }
            }
            prop_assert_eq!(split_passages(&doc, &cfg).unwrap(), split);
        }
    }
}
