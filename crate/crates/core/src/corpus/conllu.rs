//! CoNLL-U reading and writing.
//!
//! Only the columns the document model needs are kept (ID, FORM, LEMMA,
//! UPOS, HEAD, DEPREL). Multiword-token ranges (`3-4`) and empty nodes
//! (`3.1`) are skipped.

use std::fmt::Write as _;

use super::{CorpusError, Document, Sentence, Token, Upos};

const UNKNOWN_DOMAIN: &str = "unknown";

/// Parses CoNLL-U text. Documents without a `# newdoc id` get ids `doc1`,
/// `doc2`, ...
pub fn parse_conllu(text: &str) -> Result<Vec<Document>, CorpusError> {
    Reader::new(None).read(text)
}

/// Like [`parse_conllu`], but documents without an explicit id are named
/// after `source` (`source`, `source-2`, ...).
pub fn parse_conllu_named(text: &str, source: &str) -> Result<Vec<Document>, CorpusError> {
    Reader::new(Some(source)).read(text)
}

struct Reader<'a> {
    source: Option<&'a str>,
    unnamed: usize,
    docs: Vec<Document>,
    current: Option<Document>,
    sent_id: Option<String>,
    tokens: Vec<Token>,
    sentence_line: usize,
}

impl<'a> Reader<'a> {
    fn new(source: Option<&'a str>) -> Self {
        Reader {
            source,
            unnamed: 0,
            docs: Vec::new(),
            current: None,
            sent_id: None,
            tokens: Vec::new(),
            sentence_line: 0,
        }
    }

    fn fresh_doc_id(&mut self) -> String {
        self.unnamed += 1;
        match (self.source, self.unnamed) {
            (Some(name), 1) => name.to_string(),
            (Some(name), k) => format!("{name}-{k}"),
            (None, k) => format!("doc{k}"),
        }
    }

    fn start_doc(&mut self, doc_id: Option<String>) {
        self.finish_doc();
        let doc_id = match doc_id {
            Some(id) => id,
            None => self.fresh_doc_id(),
        };
        self.current = Some(Document {
            doc_id,
            domain: UNKNOWN_DOMAIN.to_string(),
            sentences: Vec::new(),
            mentions: Vec::new(),
        });
    }

    fn doc_mut(&mut self) -> &mut Document {
        if self.current.is_none() {
            self.start_doc(None);
        }
        self.current.as_mut().expect("document started above")
    }

    fn finish_doc(&mut self) {
        if let Some(doc) = self.current.take() {
            if doc.sentences.is_empty() {
                log::warn!("dropping document {} with no sentences", doc.doc_id);
            } else {
                self.docs.push(doc);
            }
        }
    }

    fn finish_sentence(&mut self) -> Result<(), CorpusError> {
        let sent_id = self.sent_id.take();
        if self.tokens.is_empty() {
            return Ok(());
        }
        let tokens = std::mem::take(&mut self.tokens);
        let line = self.sentence_line;
        let doc = self.doc_mut();
        let sent_id = sent_id.unwrap_or_else(|| format!("{}-s{}", doc.doc_id, doc.sentences.len() + 1));
        let mut offset = doc.token_count();
        let mut sentence = Sentence { sent_id, tokens };
        for tok in &mut sentence.tokens {
            tok.doc_offset = offset;
            offset += 1;
        }
        sentence.validate_tree().map_err(|e| match e {
            CorpusError::Parse { message, .. } => CorpusError::Parse { line, message },
            other => other,
        })?;
        doc.sentences.push(sentence);
        Ok(())
    }

    fn comment(&mut self, body: &str) {
        let body = body.trim();
        if let Some(rest) = body.strip_prefix("newdoc") {
            let id = rest
                .trim()
                .strip_prefix("id")
                .and_then(|r| r.trim().strip_prefix('='))
                .map(|r| r.trim().to_string())
                .filter(|r| !r.is_empty());
            self.start_doc(id);
        } else if let Some(value) = key_value(body, "sent_id") {
            self.sent_id = Some(value.to_string());
        } else if let Some(value) = key_value(body, "domain") {
            self.doc_mut().domain = value.to_string();
        }
    }

    fn read(mut self, text: &str) -> Result<Vec<Document>, CorpusError> {
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                self.finish_sentence()?;
                continue;
            }
            if let Some(body) = line.strip_prefix('#') {
                // Comments after token lines belong to the next sentence.
                if !self.tokens.is_empty() {
                    self.finish_sentence()?;
                }
                self.comment(body);
                continue;
            }
            if self.tokens.is_empty() {
                self.sentence_line = lineno;
            }
            if let Some(tok) = parse_token_line(line, lineno)? {
                let expected = self.tokens.len() as u32 + 1;
                if tok.index != expected {
                    return Err(CorpusError::Parse {
                        line: lineno,
                        message: format!("expected token id {expected}, found {}", tok.index),
                    });
                }
                self.tokens.push(tok);
            }
        }
        self.finish_sentence()?;
        self.finish_doc();
        Ok(self.docs)
    }
}

fn key_value<'b>(body: &'b str, key: &str) -> Option<&'b str> {
    let rest = body.strip_prefix(key)?.trim_start();
    Some(rest.strip_prefix('=')?.trim())
}

fn parse_token_line(line: &str, lineno: usize) -> Result<Option<Token>, CorpusError> {
    let err = |message: String| CorpusError::Parse { line: lineno, message };
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 10 {
        return Err(err(format!("expected 10 tab-separated columns, found {}", cols.len())));
    }
    let id = cols[0];
    if id.contains('-') || id.contains('.') {
        return Ok(None);
    }
    let index: u32 = id
        .parse()
        .map_err(|_| err(format!("invalid token id {id:?}")))?;
    if index == 0 {
        return Err(err("token id must be at least 1".into()));
    }
    let upos: Upos = cols[3].parse().map_err(err)?;
    let head: u32 = cols[6]
        .parse()
        .map_err(|_| err(format!("invalid head {:?}", cols[6])))?;
    let deprel = cols[7];
    if deprel.is_empty() || deprel == "_" {
        return Err(err("missing dependency relation".into()));
    }
    let lemma = match cols[2] {
        "_" => None,
        l => Some(l.to_string()),
    };
    Ok(Some(Token {
        index,
        surface: cols[1].to_string(),
        lemma,
        upos,
        head,
        deprel: deprel.to_string(),
        doc_offset: 0,
    }))
}

/// Serializes documents back to CoNLL-U. Columns the model does not keep
/// are written as `_`.
pub fn write_conllu(docs: &[Document]) -> String {
    let mut out = String::new();
    for doc in docs {
        let _ = writeln!(out, "# newdoc id = {}", doc.doc_id);
        let _ = writeln!(out, "# domain = {}", doc.domain);
        for sentence in &doc.sentences {
            let _ = writeln!(out, "# sent_id = {}", sentence.sent_id);
            let text: Vec<&str> = sentence.tokens.iter().map(|t| t.surface.as_str()).collect();
            let _ = writeln!(out, "# text = {}", text.join(" "));
            for tok in &sentence.tokens {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t_\t_\t{}\t{}\t_\t_",
                    tok.index,
                    tok.surface,
                    tok.lemma.as_deref().unwrap_or("_"),
                    tok.upos,
                    tok.head,
                    tok.deprel
                );
            }
            out.push('\n');
        }
    }
    out
}
