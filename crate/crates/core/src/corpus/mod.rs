//! Document model for dependency-parsed text.
//!
//! Documents are read from CoNLL-U, validated as trees, and split into
//! passages of complete sentences. The [`Corpus`] type is the JSON
//! interchange unit shared by the CLI and the annotation service.

mod conllu;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mentions::{Mention, SpanMention};

pub use conllu::{parse_conllu, parse_conllu_named, write_conllu};
pub use split::{split_passages, Split, SplitConfig, SplitWarning};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("self-loop at sent_id {sent_id} token {token}")]
    SelfLoop { sent_id: String, token: u32 },
    #[error("sent_id {sent_id}: expected exactly one root, found {roots}")]
    RootCount { sent_id: String, roots: usize },
    #[error("sent_id {sent_id}: cycle through token {token}")]
    Cycle { sent_id: String, token: u32 },
    #[error("sent_id {sent_id}: token {token} has head {head} outside the sentence")]
    HeadOutOfRange { sent_id: String, token: u32, head: u32 },
    #[error("document {0} is empty")]
    EmptyDocument(String),
    #[error("invalid split configuration: {0}")]
    Config(String),
}

/// Universal POS tags (UD v2).
#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Upos {
    ADJ,
    ADP,
    ADV,
    AUX,
    CCONJ,
    DET,
    INTJ,
    NOUN,
    NUM,
    PART,
    PRON,
    PROPN,
    PUNCT,
    SCONJ,
    SYM,
    VERB,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::ADJ,
        Upos::ADP,
        Upos::ADV,
        Upos::AUX,
        Upos::CCONJ,
        Upos::DET,
        Upos::INTJ,
        Upos::NOUN,
        Upos::NUM,
        Upos::PART,
        Upos::PRON,
        Upos::PROPN,
        Upos::PUNCT,
        Upos::SCONJ,
        Upos::SYM,
        Upos::VERB,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::ADJ => "ADJ",
            Upos::ADP => "ADP",
            Upos::ADV => "ADV",
            Upos::AUX => "AUX",
            Upos::CCONJ => "CCONJ",
            Upos::DET => "DET",
            Upos::INTJ => "INTJ",
            Upos::NOUN => "NOUN",
            Upos::NUM => "NUM",
            Upos::PART => "PART",
            Upos::PRON => "PRON",
            Upos::PROPN => "PROPN",
            Upos::PUNCT => "PUNCT",
            Upos::SCONJ => "SCONJ",
            Upos::SYM => "SYM",
            Upos::VERB => "VERB",
            Upos::X => "X",
        }
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Upos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Upos::ALL
            .iter()
            .copied()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| format!("unknown UPOS tag {s:?}"))
    }
}

/// A syntactic word. `index` is 1-based within the sentence, `head` is the
/// index of the parent (0 for the root), and `doc_offset` is the 0-based
/// position of the token within its document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: u32,
    pub surface: String,
    pub lemma: Option<String>,
    pub upos: Upos,
    pub head: u32,
    pub deprel: String,
    pub doc_offset: usize,
}

impl Token {
    /// Dependency relation without its language-specific subtype
    /// (`nmod:poss` -> `nmod`).
    pub fn base_deprel(&self) -> &str {
        self.deprel.split(':').next().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Document offset of the first token, or `None` for an empty sentence.
    pub fn first_offset(&self) -> Option<usize> {
        self.tokens.first().map(|t| t.doc_offset)
    }

    pub fn contains_offset(&self, offset: usize) -> bool {
        match (self.tokens.first(), self.tokens.last()) {
            (Some(first), Some(last)) => first.doc_offset <= offset && offset <= last.doc_offset,
            _ => false,
        }
    }

    /// Token at a document offset, if it belongs to this sentence.
    pub fn token_at(&self, offset: usize) -> Option<&Token> {
        let first = self.first_offset()?;
        offset
            .checked_sub(first)
            .and_then(|i| self.tokens.get(i))
    }

    /// Checks the single-root and acyclicity invariants.
    pub fn validate_tree(&self) -> Result<(), CorpusError> {
        let n = self.tokens.len() as u32;
        let mut roots = 0;
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.index != i as u32 + 1 {
                return Err(CorpusError::Parse {
                    line: 0,
                    message: format!(
                        "sent_id {}: token indices must be consecutive from 1, found {} at position {}",
                        self.sent_id,
                        tok.index,
                        i + 1
                    ),
                });
            }
            if tok.head == tok.index {
                return Err(CorpusError::SelfLoop {
                    sent_id: self.sent_id.clone(),
                    token: tok.index,
                });
            }
            if tok.head > n {
                return Err(CorpusError::HeadOutOfRange {
                    sent_id: self.sent_id.clone(),
                    token: tok.index,
                    head: tok.head,
                });
            }
            if tok.head == 0 {
                roots += 1;
            }
        }
        if roots != 1 {
            return Err(CorpusError::RootCount {
                sent_id: self.sent_id.clone(),
                roots,
            });
        }
        // Every token must reach the root within n steps.
        for tok in &self.tokens {
            let mut cur = tok.head;
            let mut steps = 0;
            while cur != 0 {
                steps += 1;
                if steps > n {
                    return Err(CorpusError::Cycle {
                        sent_id: self.sent_id.clone(),
                        token: tok.index,
                    });
                }
                cur = self.tokens[cur as usize - 1].head;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub domain: String,
    pub sentences: Vec<Sentence>,
    /// Detected mentions over the whole document, filled by `detect`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mentions: Vec<SpanMention>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    /// Index of the sentence containing a document offset.
    pub fn sentence_index_of(&self, offset: usize) -> Option<usize> {
        self.sentences.iter().position(|s| s.contains_offset(offset))
    }

    pub fn sentence_of(&self, offset: usize) -> Option<&Sentence> {
        self.sentence_index_of(offset).map(|i| &self.sentences[i])
    }

    /// Document offsets covered by sentences `first..=last`.
    pub fn offset_range(&self, first: usize, last: usize) -> Option<(usize, usize)> {
        let start = self.sentences.get(first)?.first_offset()?;
        let end = self.sentences.get(last)?.tokens.last()?.doc_offset;
        Some((start, end))
    }
}

/// A run of complete sentences shown to annotators as one unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    /// Inclusive sentence indices within the document.
    pub sentence_range: [usize; 2],
    pub token_count: usize,
    #[serde(default)]
    pub mentions: Vec<Mention>,
}

impl Passage {
    pub fn mention_ids(&self) -> Vec<String> {
        self.mentions.iter().map(|m| m.mention_id.clone()).collect()
    }
}

pub fn passage_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}.p{ordinal:03}")
}

/// The corpus interchange file: documents plus their passages.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    #[serde(default)]
    pub passages: Vec<Passage>,
}

impl Corpus {
    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn passage(&self, passage_id: &str) -> Option<&Passage> {
        self.passages.iter().find(|p| p.passage_id == passage_id)
    }

    /// Re-splits every document and distributes detected mentions into the
    /// new passages.
    pub fn resplit(&mut self, cfg: &SplitConfig) -> Result<Vec<SplitWarning>, CorpusError> {
        let mut passages = Vec::new();
        let mut warnings = Vec::new();
        for doc in &self.documents {
            let split = split_passages(doc, cfg)?;
            passages.extend(split.passages);
            warnings.extend(split.warnings);
        }
        self.passages = passages;
        self.attach_mentions();
        Ok(warnings)
    }

    /// Copies each document's detected mentions into the passages that
    /// contain them, assigning stable mention ids.
    pub fn attach_mentions(&mut self) {
        for passage in &mut self.passages {
            let Some(doc) = self.documents.iter().find(|d| d.doc_id == passage.doc_id) else {
                continue;
            };
            let Some((lo, hi)) = doc.offset_range(passage.sentence_range[0], passage.sentence_range[1])
            else {
                passage.mentions.clear();
                continue;
            };
            passage.mentions = doc
                .mentions
                .iter()
                .filter(|m| m.span.start >= lo && m.span.end <= hi)
                .map(|m| Mention::new(&passage.passage_id, m.span, m.head))
                .collect();
        }
    }

    /// Tokens covered by a passage, in document order.
    pub fn passage_tokens(&self, passage: &Passage) -> Vec<&Token> {
        let Some(doc) = self.document(&passage.doc_id) else {
            return Vec::new();
        };
        let [first, last] = passage.sentence_range;
        doc.sentences
            .get(first..=last.min(doc.sentences.len().saturating_sub(1)))
            .unwrap_or(&[])
            .iter()
            .flat_map(|s| s.tokens.iter())
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    /// Builds a sentence from `(surface, upos, head, deprel)` rows.
    pub fn sentence(sent_id: &str, first_offset: usize, rows: &[(&str, Upos, u32, &str)]) -> Sentence {
        Sentence {
            sent_id: sent_id.to_string(),
            tokens: rows
                .iter()
                .enumerate()
                .map(|(i, (surface, upos, head, deprel))| Token {
                    index: i as u32 + 1,
                    surface: surface.to_string(),
                    lemma: None,
                    upos: *upos,
                    head: *head,
                    deprel: deprel.to_string(),
                    doc_offset: first_offset + i,
                })
                .collect(),
        }
    }
}
