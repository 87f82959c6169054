//! Automatic mention detection over dependency trees.
//!
//! Candidates are built per sentence:
//!
//! 1. every noun, proper noun, pronoun or number is expanded to the
//!    contiguous cover of the tokens reachable from it through whitelisted
//!    relations (multiword `compound`/`flat`/`fixed` and modifier
//!    `det`/`amod`/`nummod`/`nmod`, including `nmod:poss`);
//! 2. possessive nominal modifiers become mentions of their own;
//! 3. proper-noun premodifiers inside multiword expressions become mentions;
//! 4. in coordination, each conjunct and the whole coordinated phrase are
//!    mentions;
//! 5. a mention is dropped when a larger mention with the same head exists,
//!    and crossing spans are merged into their union.
//!
//! Nested spans with different heads (`[[my] hands]`) are kept.

use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Token, Upos};

const MULTIWORD_RELATIONS: [&str; 3] = ["compound", "flat", "fixed"];
const MODIFIER_RELATIONS: [&str; 4] = ["det", "amod", "nummod", "nmod"];
const POSSESSIVE: &str = "nmod:poss";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MentionError {
    #[error("empty span [{start}, {end}]")]
    EmptySpan { start: usize, end: usize },
    #[error("span [{start}, {end}] is not inside sentence {sent_id}")]
    OutsideSentence {
        start: usize,
        end: usize,
        sent_id: String,
    },
}

/// Inclusive range of document offsets, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        (self.end + 1).saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, offset: usize) -> bool {
        self.start <= offset && offset <= self.end
    }

    pub fn contains_span(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn strictly_contains(&self, other: &Span) -> bool {
        self.contains_span(other) && self != other
    }

    /// Overlapping without either containing the other.
    pub fn crosses(&self, other: &Span) -> bool {
        let overlap = self.start <= other.end && other.start <= self.end;
        overlap && !self.contains_span(other) && !other.contains_span(self)
    }

    pub fn union(&self, other: &Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }

    /// Mention order: by start, longer spans first.
    pub fn order_key(&self) -> (usize, Reverse<usize>) {
        (self.start, Reverse(self.len()))
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(span: Span) -> Self {
        [span.start, span.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// A detected span and its headword, before it is assigned to a passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanMention {
    pub span: Span,
    pub head: usize,
}

/// A mention as shown to annotators.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub mention_id: String,
    pub passage_id: String,
    pub span: Span,
    pub head: usize,
}

impl Mention {
    pub fn new(passage_id: &str, span: Span, head: usize) -> Self {
        Mention {
            mention_id: mention_id(passage_id, span),
            passage_id: passage_id.to_string(),
            span,
            head,
        }
    }
}

/// `"<passage_id>:<start>-<end>"`
pub fn mention_id(passage_id: &str, span: Span) -> String {
    format!("{passage_id}:{span}")
}

/// Recovers the span encoded in a mention id, if it has the standard shape.
pub fn parse_mention_id(id: &str) -> Option<(&str, Span)> {
    let (passage, span) = id.rsplit_once(':')?;
    let (start, end) = span.split_once('-')?;
    Some((passage, Span::new(start.parse().ok()?, end.parse().ok()?)))
}

/// Mentions sorted by `(start, -(end - start))`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MentionSet {
    mentions: Vec<SpanMention>,
}

impl MentionSet {
    pub fn new(mut mentions: Vec<SpanMention>) -> Self {
        mentions.sort_by_key(|m| (m.span.order_key(), m.head));
        MentionSet { mentions }
    }

    pub fn as_slice(&self) -> &[SpanMention] {
        &self.mentions
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SpanMention> {
        self.mentions.iter()
    }

    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn spans(&self) -> Vec<Span> {
        self.mentions.iter().map(|m| m.span).collect()
    }

    pub fn into_vec(self) -> Vec<SpanMention> {
        self.mentions
    }
}

impl IntoIterator for MentionSet {
    type Item = SpanMention;
    type IntoIter = std::vec::IntoIter<SpanMention>;

    fn into_iter(self) -> Self::IntoIter {
        self.mentions.into_iter()
    }
}

impl<'a> IntoIterator for &'a MentionSet {
    type Item = &'a SpanMention;
    type IntoIter = std::slice::Iter<'a, SpanMention>;

    fn into_iter(self) -> Self::IntoIter {
        self.mentions.iter()
    }
}

/// Parent/child/depth view of one sentence, indexed by 0-based position.
struct Tree<'s> {
    sentence: &'s Sentence,
    first: usize,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
}

impl<'s> Tree<'s> {
    fn new(sentence: &'s Sentence) -> Self {
        let n = sentence.tokens.len();
        let mut children = vec![Vec::new(); n];
        for (pos, tok) in sentence.tokens.iter().enumerate() {
            if tok.head > 0 {
                children[tok.head as usize - 1].push(pos);
            }
        }
        let mut depth = vec![0; n];
        for (pos, d) in depth.iter_mut().enumerate() {
            let mut cur = pos;
            let mut steps = 0;
            while let Some(parent) = Self::parent_of(sentence, cur) {
                cur = parent;
                steps += 1;
                if steps > n {
                    break;
                }
            }
            *d = steps;
        }
        Tree {
            sentence,
            first: sentence.first_offset().unwrap_or(0),
            children,
            depth,
        }
    }

    fn parent_of(sentence: &Sentence, pos: usize) -> Option<usize> {
        match sentence.tokens[pos].head {
            0 => None,
            h => Some(h as usize - 1),
        }
    }

    fn parent(&self, pos: usize) -> Option<usize> {
        Self::parent_of(self.sentence, pos)
    }

    fn token(&self, pos: usize) -> &Token {
        &self.sentence.tokens[pos]
    }

    fn offset(&self, pos: usize) -> usize {
        self.first + pos
    }

    fn pos(&self, offset: usize) -> usize {
        offset - self.first
    }

    fn check_span(&self, span: Span) -> Result<(), MentionError> {
        if span.is_empty() {
            return Err(MentionError::EmptySpan {
                start: span.start,
                end: span.end,
            });
        }
        if !self.sentence.contains_offset(span.start) || !self.sentence.contains_offset(span.end) {
            return Err(MentionError::OutsideSentence {
                start: span.start,
                end: span.end,
                sent_id: self.sentence.sent_id.clone(),
            });
        }
        Ok(())
    }

    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent(a).expect("deeper node has a parent");
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent(b).expect("deeper node has a parent");
        }
        while a != b {
            a = self.parent(a).expect("non-root node has a parent");
            b = self.parent(b).expect("non-root node has a parent");
        }
        a
    }

    fn head_of(&self, span: Span) -> Result<usize, MentionError> {
        self.check_span(span)?;
        let lo = self.pos(span.start);
        let hi = self.pos(span.end);
        let lca = (lo + 1..=hi).fold(lo, |acc, pos| self.lca(acc, pos));
        if (lo..=hi).contains(&lca) {
            return Ok(self.offset(lca));
        }
        // LCA outside the span: nearest span token to it, leftmost on ties.
        let best = (lo..=hi)
            .min_by_key(|&pos| (self.depth[pos] - self.depth[lca], pos))
            .expect("span is non-empty");
        Ok(self.offset(best))
    }

    fn expand(&self, head: usize) -> Span {
        let mut lo = head;
        let mut hi = head;
        let mut stack = vec![head];
        while let Some(pos) = stack.pop() {
            lo = lo.min(pos);
            hi = hi.max(pos);
            stack.extend(
                self.children[pos]
                    .iter()
                    .copied()
                    .filter(|&c| is_whitelisted(self.token(c))),
            );
        }
        Span::new(self.offset(lo), self.offset(hi))
    }

    fn conjuncts(&self, pos: usize) -> impl Iterator<Item = usize> + '_ {
        self.children[pos]
            .iter()
            .copied()
            .filter(|&c| self.token(c).base_deprel() == "conj")
    }

    /// True when `outer` covers a conjunct of the token at `head`, i.e. it
    /// is a coordinated phrase rather than an expansion of the first
    /// conjunct alone.
    fn is_coordination(&self, outer: Span, head: usize) -> bool {
        if !self.sentence.contains_offset(head) {
            return false;
        }
        self.conjuncts(self.pos(head))
            .any(|c| outer.contains(self.offset(c)))
    }
}

fn is_whitelisted(token: &Token) -> bool {
    let base = token.base_deprel();
    MULTIWORD_RELATIONS.contains(&base) || MODIFIER_RELATIONS.contains(&base)
}

fn is_markable(token: &Token) -> bool {
    matches!(token.upos, Upos::NOUN | Upos::PROPN | Upos::PRON | Upos::NUM)
}

/// Whether a markable token starts its own candidate span. Tokens attached
/// inside a multiword expression are part of their head's phrase, and
/// numbers only count when they are not numeric modifiers.
fn heads_own_phrase(token: &Token) -> bool {
    if !is_markable(token) {
        return false;
    }
    let base = token.base_deprel();
    match token.upos {
        Upos::PRON => true,
        Upos::NUM if base == "nummod" => false,
        _ => !MULTIWORD_RELATIONS.contains(&base),
    }
}

/// Minimal contiguous span covering `head_token` and every token reachable
/// from it through whitelisted relations.
pub fn expand_span(head_token: &Token, sentence: &Sentence) -> Span {
    let tree = Tree::new(sentence);
    let pos = head_token.index as usize - 1;
    tree.expand(pos)
}

/// Headword of a span: the span token that dominates every other span
/// token. If the lowest common ancestor falls outside the span, the span
/// token closest to it wins (leftmost on ties).
pub fn head_of(span: Span, sentence: &Sentence) -> Result<usize, MentionError> {
    Tree::new(sentence).head_of(span)
}

/// Detects the mentions of one sentence.
pub fn detect_mentions(sentence: &Sentence) -> MentionSet {
    if sentence.is_empty() {
        return MentionSet::default();
    }
    let tree = Tree::new(sentence);
    let mut spans = Vec::new();

    for (pos, token) in sentence.tokens.iter().enumerate() {
        if heads_own_phrase(token) {
            spans.push(tree.expand(pos));
        }
        if token.deprel == POSSESSIVE {
            spans.push(tree.expand(pos));
        }
        let premodifier = token.upos == Upos::PROPN
            && token.base_deprel() == "compound"
            && token.head > token.index;
        if premodifier {
            spans.push(tree.expand(pos));
        }
        if is_markable(token) {
            let conjuncts: Vec<usize> = tree
                .conjuncts(pos)
                .filter(|&c| is_markable(tree.token(c)))
                .collect();
            if !conjuncts.is_empty() {
                let mut cover = tree.expand(pos);
                for c in conjuncts {
                    cover = cover.union(&tree.expand(c));
                    for &cc in &tree.children[c] {
                        if tree.token(cc).base_deprel() == "cc" {
                            cover = cover.union(&Span::new(tree.offset(cc), tree.offset(cc)));
                        }
                    }
                }
                spans.push(cover);
            }
        }
    }

    let candidates = spans
        .into_iter()
        .map(|span| SpanMention {
            span,
            head: tree.head_of(span).expect("candidate spans lie inside the sentence"),
        })
        .collect();
    merge_with(&tree, candidates)
}

/// Removes mentions that have a larger mention with the same head, and
/// merges crossing spans into their union (head recomputed) until no
/// crossing pair remains. Coordinated phrases do not absorb their first
/// conjunct.
pub fn dedupe_and_merge(mentions: Vec<SpanMention>, sentence: &Sentence) -> MentionSet {
    if sentence.is_empty() {
        return MentionSet::new(mentions);
    }
    merge_with(&Tree::new(sentence), mentions)
}

fn merge_with(tree: &Tree<'_>, mut mentions: Vec<SpanMention>) -> MentionSet {
    loop {
        mentions.sort_by_key(|m| (m.span.order_key(), m.head));
        mentions.dedup_by_key(|m| m.span);

        let crossing = mentions.iter().enumerate().find_map(|(i, a)| {
            mentions[i + 1..]
                .iter()
                .position(|b| a.span.crosses(&b.span))
                .map(|j| (i, i + 1 + j))
        });
        if let Some((i, j)) = crossing {
            let span = mentions[i].span.union(&mentions[j].span);
            let head = tree
                .head_of(span)
                .unwrap_or_else(|_| mentions[i].head);
            mentions.swap_remove(j);
            mentions.swap_remove(i);
            mentions.push(SpanMention { span, head });
            continue;
        }

        let keep: Vec<bool> = mentions
            .iter()
            .map(|m| {
                !mentions.iter().any(|other| {
                    other.head == m.head
                        && other.span.strictly_contains(&m.span)
                        && !tree.is_coordination(other.span, other.head)
                })
            })
            .collect();
        if keep.iter().all(|&k| k) {
            break;
        }
        let mut flags = keep.into_iter();
        mentions.retain(|_| flags.next().unwrap_or(true));
    }
    MentionSet::new(mentions)
}
