//! Domain types, interchange formats, and corpus normalization.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::io::{self, IoError};

/// Default minimum token count kept by [`filter_short`].
pub const MIN_TOKENS: usize = 5;

/// Universal part-of-speech tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Propn,
    Verb,
    Adj,
    Adv,
    Pron,
    Num,
    Aux,
    Adp,
    Part,
    Punct,
    Sym,
    Det,
    Cconj,
    Sconj,
    Intj,
    X,
}

impl Pos {
    pub const ALL: [Pos; 17] = [
        Pos::Noun,
        Pos::Propn,
        Pos::Verb,
        Pos::Adj,
        Pos::Adv,
        Pos::Pron,
        Pos::Num,
        Pos::Aux,
        Pos::Adp,
        Pos::Part,
        Pos::Punct,
        Pos::Sym,
        Pos::Det,
        Pos::Cconj,
        Pos::Sconj,
        Pos::Intj,
        Pos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "NOUN",
            Pos::Propn => "PROPN",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Adv => "ADV",
            Pos::Pron => "PRON",
            Pos::Num => "NUM",
            Pos::Aux => "AUX",
            Pos::Adp => "ADP",
            Pos::Part => "PART",
            Pos::Punct => "PUNCT",
            Pos::Sym => "SYM",
            Pos::Det => "DET",
            Pos::Cconj => "CCONJ",
            Pos::Sconj => "SCONJ",
            Pos::Intj => "INTJ",
            Pos::X => "X",
        }
    }

    /// Tags that can head a noun chunk.
    pub fn is_nominal(self) -> bool {
        matches!(self, Pos::Noun | Pos::Propn | Pos::Num | Pos::Pron)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pos::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown POS tag {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub surface: String,
    pub pos: Pos,
}

impl TaggedToken {
    pub fn new(surface: impl Into<String>, pos: Pos) -> Self {
        TaggedToken {
            surface: surface.into(),
            pos,
        }
    }
}

/// A tokenized sentence with POS tags and half-open noun-chunk spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub id: String,
    pub text: String,
    pub tokens: Vec<TaggedToken>,
    pub noun_chunks: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("token {0} has an empty surface")]
    EmptySurface(usize),
    #[error("chunk {index} span [{start}, {end}) is empty or reversed")]
    EmptySpan { index: usize, start: usize, end: usize },
    #[error("chunk {index} span end {end} exceeds token count {len}")]
    SpanOutOfBounds { index: usize, end: usize, len: usize },
    #[error("chunk {index} overlaps or precedes the previous chunk")]
    SpanOrder { index: usize },
    #[error("chunk {index} contains no nominal token")]
    ChunkWithoutNominal { index: usize },
}

impl TaggedSentence {
    /// Check the sentence invariants: non-empty surfaces, in-bounds sorted
    /// non-overlapping spans, and at least one nominal token per chunk.
    pub fn validate(&self) -> Result<(), Violation> {
        if let Some(i) = self.tokens.iter().position(|t| t.surface.is_empty()) {
            return Err(Violation::EmptySurface(i));
        }
        let mut prev_end = 0;
        for (index, &(start, end)) in self.noun_chunks.iter().enumerate() {
            if start >= end {
                return Err(Violation::EmptySpan { index, start, end });
            }
            if end > self.tokens.len() {
                return Err(Violation::SpanOutOfBounds {
                    index,
                    end,
                    len: self.tokens.len(),
                });
            }
            if start < prev_end {
                return Err(Violation::SpanOrder { index });
            }
            if !self.tokens[start..end].iter().any(|t| t.pos.is_nominal()) {
                return Err(Violation::ChunkWithoutNominal { index });
            }
            prev_end = end;
        }
        Ok(())
    }

    /// Concatenated token surfaces (no separator).
    pub fn surface(&self) -> String {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn chunk_surface(&self, span: (usize, usize)) -> String {
        self.tokens[span.0..span.1].iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

/// A sentence pair carrying either a gold similarity score or an NLI label.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub s1: String,
    pub s2: String,
    pub score: Option<f64>,
    pub label: Option<NliLabel>,
}

/// STS pair-file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsRecord {
    pub s1: String,
    pub s2: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// NLI pair-file line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliRecord {
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
}

impl From<StsRecord> for SentencePair {
    fn from(r: StsRecord) -> Self {
        SentencePair {
            s1: r.s1,
            s2: r.s2,
            score: r.score,
            label: None,
        }
    }
}

impl From<NliRecord> for SentencePair {
    fn from(r: NliRecord) -> Self {
        SentencePair {
            s1: r.premise,
            s2: r.hypothesis,
            score: None,
            label: Some(r.label),
        }
    }
}

impl SentencePair {
    pub fn validate(&self) -> Result<(), String> {
        if self.score.is_some() && self.label.is_some() {
            return Err("pair carries both a score and a label".into());
        }
        match self.score {
            Some(s) if !(0.0..=5.0).contains(&s) => Err(format!("score {s} outside [0, 5]")),
            _ => Ok(()),
        }
    }
}

/// Training example `(anchor, positive, negative)`. A missing positive means
/// the anchor is re-encoded under a second dropout mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: String,
    pub positive: Option<String>,
    pub negative: String,
}

impl Triplet {
    pub fn validate(&self) -> Result<(), String> {
        if self.anchor.is_empty() {
            return Err("empty anchor".into());
        }
        if self.negative.is_empty() {
            return Err("empty negative".into());
        }
        if self.negative == self.anchor {
            return Err("negative equals anchor".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub qid: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub did: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelRecord {
    pub qid: String,
    pub did: String,
    pub rel: u8,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("line {line}: {violation}")]
    Validation { line: usize, violation: String },
}

fn markup_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[^<>]*>").expect("static regex"))
}

fn normalize_pass(raw: &str) -> String {
    let nfkc: String = raw.nfkc().collect();
    let stripped = markup_re().replace_all(&nfkc, "");
    let mut out = String::with_capacity(stripped.len());
    let mut pending_space = false;
    for c in stripped.chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else if c.is_control() {
            continue;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    }
    out
}

/// NFKC-normalize, strip `<...>` markup and control characters, collapse
/// whitespace runs to one space, and trim.
///
/// Markup removal can expose new tags (`<<b>i>`) or split composed
/// sequences, so passes repeat until a fixed point.
pub fn normalize_text(raw: &str) -> String {
    let mut current = normalize_pass(raw);
    for _ in 0..16 {
        let next = normalize_pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Normalize a tagged sentence in place of the raw one: the text and every
/// token surface are normalized, tokens that become empty are dropped, and
/// chunk spans are remapped (chunks left empty or without a nominal are dropped).
pub fn normalize_sentence(s: &TaggedSentence) -> TaggedSentence {
    let mut new_index = Vec::with_capacity(s.tokens.len() + 1);
    let mut tokens = Vec::with_capacity(s.tokens.len());
    for t in &s.tokens {
        new_index.push(tokens.len());
        let surface = normalize_text(&t.surface);
        if !surface.is_empty() {
            tokens.push(TaggedToken::new(surface, t.pos));
        }
    }
    new_index.push(tokens.len());
    let noun_chunks = s
        .noun_chunks
        .iter()
        .map(|&(a, b)| (new_index[a.min(s.tokens.len())], new_index[b.min(s.tokens.len())]))
        .filter(|&(a, b)| a < b && tokens[a..b].iter().any(|t: &TaggedToken| t.pos.is_nominal()))
        .collect();
    TaggedSentence {
        id: s.id.clone(),
        text: normalize_text(&s.text),
        tokens,
        noun_chunks,
    }
}

/// Keep sentences with at least `min_tokens` tokens, in order.
pub fn filter_short(corpus: &[TaggedSentence], min_tokens: usize) -> Vec<TaggedSentence> {
    corpus
        .iter()
        .filter(|s| s.tokens.len() >= min_tokens)
        .cloned()
        .collect()
}

/// Load and validate a tagged-corpus interchange file.
pub fn load_tagged_corpus(path: &Path) -> Result<Vec<TaggedSentence>, CorpusError> {
    let records: Vec<(usize, TaggedSentence)> = io::read_jsonl_numbered(path)?;
    records
        .into_iter()
        .map(|(line, s)| {
            s.validate().map_err(|v| CorpusError::Validation {
                line,
                violation: v.to_string(),
            })?;
            Ok(s)
        })
        .collect()
}

pub fn write_tagged_corpus(path: &Path, corpus: &[TaggedSentence]) -> Result<(), CorpusError> {
    Ok(io::write_jsonl(path, corpus)?)
}

pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>, CorpusError> {
    let records: Vec<(usize, Triplet)> = io::read_jsonl_numbered(path)?;
    records
        .into_iter()
        .map(|(line, t)| {
            t.validate()
                .map_err(|violation| CorpusError::Validation { line, violation })?;
            Ok(t)
        })
        .collect()
}

pub fn load_sts_pairs(path: &Path) -> Result<Vec<SentencePair>, CorpusError> {
    let records: Vec<(usize, StsRecord)> = io::read_jsonl_numbered(path)?;
    records
        .into_iter()
        .map(|(line, r)| {
            let pair = SentencePair::from(r);
            pair.validate()
                .map_err(|violation| CorpusError::Validation { line, violation })?;
            Ok(pair)
        })
        .collect()
}

pub fn load_nli_records(path: &Path) -> Result<Vec<NliRecord>, CorpusError> {
    Ok(io::read_jsonl(path)?)
}
