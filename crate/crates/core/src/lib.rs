//! Building blocks for crowdsourced coreference annotation.
//!
//! * [`corpus`]: CoNLL-U ingestion and passage splitting.
//! * [`mentions`]: rule-based mention detection over dependency trees.
//! * [`mention_eval`]: headword-matching evaluation of detected mentions.
//! * [`annotation`]: annotator clusterings, pairwise votes and threshold
//!   aggregation.
//! * [`scoring`]: B3, inter-annotator agreement and the screening gate.
//! * [`tutorial`]: tutorial scripts and per-step feedback.
//! * [`reports`]: the above applied across a whole corpus.

pub mod annotation;
pub mod corpus;
pub mod mention_eval;
pub mod mentions;
pub mod reports;
pub mod scoring;
pub mod tutorial;
mod union_find;

pub use annotation::{aggregate, count_votes, AggregateClustering, AggregationConfig, Clustering, VoteMatrix};
pub use corpus::{parse_conllu, split_passages, Corpus, Document, Passage, Sentence, SplitConfig, Token, Upos};
pub use mention_eval::{eval_detector, DetectorEval};
pub use mentions::{dedupe_and_merge, detect_mentions, expand_span, head_of, Mention, MentionSet, Span, SpanMention};
pub use scoring::{b3, pairwise_iaa, screening_pass, B3Score, IaaReport, ScreeningResult, SingletonMode};
pub use tutorial::{TutorialScript, TutorialStep};
