//! Documents, the whitespace tokenizer and JSONL corpus files.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"doc_id": "d1", "query": "...", "source": "...", "summary": "...",
//!  "alignments": [{"start": 3, "len": 5, "p": 0.82}]}
//! ```
//!
//! `summary` and `alignments` are optional. Alignment offsets index tokens of
//! `source` after whitespace splitting.

mod synth;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Token table with five reserved entries at fixed ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub const PAD: TokenId = 0;
    pub const UNK: TokenId = 1;
    pub const BOS: TokenId = 2;
    pub const SEP: TokenId = 3;
    pub const EXTRA: TokenId = 4;

    pub const RESERVED: [&'static str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "<extra_token>"];

    pub fn new() -> Self {
        let tokens: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocab { tokens, index }
    }

    /// Rebuilds a vocabulary from its full token list (reserved entries first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < Self::RESERVED.len()
            || tokens.iter().zip(Self::RESERVED).any(|(a, b)| a != b)
        {
            return Err(Error::Validation(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Adds a plain word, returning its id. Reserved spellings are never
    /// added and map to UNK.
    pub fn add(&mut self, word: &str) -> TokenId {
        if Self::RESERVED.contains(&word) {
            return Self::UNK;
        }
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn id(&self, word: &str) -> TokenId {
        if Self::RESERVED.contains(&word) {
            return Self::UNK;
        }
        self.index.get(word).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_reserved(id: TokenId) -> bool {
        (id as usize) < Self::RESERVED.len()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

/// Splits on whitespace; unseen words become UNK. Never yields a reserved id
/// other than UNK.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    text.split_whitespace().map(|w| vocab.id(w)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanAlignment {
    pub source_start: usize,
    pub span_len: usize,
    pub probability: f64,
}

impl SpanAlignment {
    pub fn end(&self) -> usize {
        self.source_start + self.span_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub query: Vec<TokenId>,
    pub source: Vec<TokenId>,
    pub reference_summary: Option<Vec<TokenId>>,
    pub alignments: Option<Vec<SpanAlignment>>,
}

impl Document {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let id = &self.doc_id;
        if self.query.is_empty() {
            return Err(Error::Validation(format!("document {id}: empty query")));
        }
        if self.source.is_empty() {
            return Err(Error::Validation(format!("document {id}: empty source")));
        }
        let summary = self.reference_summary.iter().flatten();
        if let Some(&bad) = self
            .query
            .iter()
            .chain(&self.source)
            .chain(summary)
            .find(|&&t| t as usize >= vocab_size)
        {
            return Err(Error::Validation(format!(
                "document {id}: token id {bad} out of range for vocabulary of {vocab_size}"
            )));
        }
        for (j, a) in self.alignments.iter().flatten().enumerate() {
            if a.span_len == 0 {
                return Err(Error::Validation(format!("document {id}: alignment {j} has zero length")));
            }
            if a.end() > self.source.len() {
                return Err(Error::Validation(format!(
                    "document {id}: alignment {j} [{}, {}) exceeds source length {}",
                    a.source_start,
                    a.end(),
                    self.source.len()
                )));
            }
            if !(0.0..=1.0).contains(&a.probability) {
                return Err(Error::Validation(format!(
                    "document {id}: alignment {j} probability {} outside [0, 1]",
                    a.probability
                )));
            }
        }
        Ok(())
    }
}

/// Wire form of one corpus line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RawRecord {
    pub doc_id: String,
    pub query: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignments: Option<Vec<RawSpan>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RawSpan {
    pub start: usize,
    pub len: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub docs: Vec<Document>,
}

impl Corpus {
    pub fn to_records(&self) -> Vec<RawRecord> {
        self.docs.iter().map(|d| to_record(d, &self.vocab)).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in self.to_records() {
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

fn to_record(doc: &Document, vocab: &Vocab) -> RawRecord {
    RawRecord {
        doc_id: doc.doc_id.clone(),
        query: vocab.decode(&doc.query),
        source: vocab.decode(&doc.source),
        summary: doc.reference_summary.as_ref().map(|s| vocab.decode(s)),
        alignments: doc.alignments.as_ref().map(|al| {
            al.iter()
                .map(|a| RawSpan {
                    start: a.source_start,
                    len: a.span_len,
                    p: a.probability,
                })
                .collect()
        }),
    }
}

fn parse_records(text: &str) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

fn record_to_document(rec: &RawRecord, vocab: &Vocab) -> Result<Document> {
    let doc = Document {
        doc_id: rec.doc_id.clone(),
        query: tokenize(&rec.query, vocab),
        source: tokenize(&rec.source, vocab),
        reference_summary: rec.summary.as_ref().map(|s| tokenize(s, vocab)),
        alignments: rec.alignments.as_ref().map(|al| {
            al.iter()
                .map(|s| SpanAlignment {
                    source_start: s.start,
                    span_len: s.len,
                    probability: s.p,
                })
                .collect()
        }),
    };
    doc.validate(vocab.len())?;
    Ok(doc)
}

/// Parses corpus text, building the vocabulary from the words in first
/// appearance order (query, source, then summary of each line).
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let records = parse_records(text)?;
    let mut vocab = Vocab::new();
    for rec in &records {
        let summary = rec.summary.as_deref().unwrap_or("");
        for w in rec
            .query
            .split_whitespace()
            .chain(rec.source.split_whitespace())
            .chain(summary.split_whitespace())
        {
            vocab.add(w);
        }
    }
    let docs = records
        .iter()
        .map(|r| record_to_document(r, &vocab))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { vocab, docs })
}

/// Parses corpus text against a fixed vocabulary (e.g. one stored in a
/// checkpoint). Unknown words map to UNK.
pub fn parse_corpus_with_vocab(text: &str, vocab: &Vocab) -> Result<Vec<Document>> {
    parse_records(text)?
        .iter()
        .map(|r| record_to_document(r, vocab))
        .collect()
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

pub fn load_corpus_with_vocab(path: &Path, vocab: &Vocab) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_with_vocab(&text, vocab)
}
