//! Relevant-content-word analysis.
//!
//! For a pair `(a, b)` the most relevant word is the one whose removal from
//! either sentence lowers `cossim(a, b)` the most:
//! `ŵ = argmax_w cossim(a, b) − min(cossim(a∖w, b), cossim(a, b∖w))`.
//! Aggregating the POS tags of `ŵ` over many pairs shows which word classes
//! drive a model's similarity judgments.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::contrastive::cosine_sim;
use crate::corpus::{Pos, TaggedSentence, TaggedToken};

/// Default minimum gold score for a pair to count as relevant.
pub const DEFAULT_MIN_SCORE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RelevanceError {
    #[error("both sentences need at least two tokens")]
    TooShort,
    #[error("every candidate removal would empty a sentence")]
    NoCandidate,
    #[error("similarity of the pair is undefined (zero embedding)")]
    DegeneratePair,
    #[error("no results to aggregate")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceResult {
    pub pair_id: String,
    pub word: String,
    pub pos: Pos,
    pub drop: f64,
}

/// Input line for pair analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedPair {
    pub id: String,
    pub a: TaggedSentence,
    pub b: TaggedSentence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    A,
    B,
}

fn without(tokens: &[TaggedToken], word: &str) -> Vec<TaggedToken> {
    tokens.iter().filter(|t| t.surface != word).cloned().collect()
}

fn first_tag(tokens: &[TaggedToken], word: &str) -> Option<Pos> {
    tokens.iter().find(|t| t.surface == word).map(|t| t.pos)
}

/// Candidate words in order of first occurrence (sentence `a`, then `b`).
pub fn candidates(a: &TaggedSentence, b: &TaggedSentence) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for t in a.tokens.iter().chain(&b.tokens) {
        if !seen.iter().any(|s| s == &t.surface) {
            seen.push(t.surface.clone());
        }
    }
    seen
}

/// Score of one candidate and the tag of the occurrence behind it, or `None`
/// when every removal of the word is blocked or undefined.
fn score_word<F>(a: &TaggedSentence, b: &TaggedSentence, base: f64, word: &str, embed: &F) -> Option<(f64, Pos)>
where
    F: Fn(&[TaggedToken]) -> Vec<f64>,
{
    let mut best: Option<(f64, Side)> = None;
    let mut blocked = 0;
    let mut occurring = 0;
    for side in [Side::A, Side::B] {
        let (this, other) = match side {
            Side::A => (a, b),
            Side::B => (b, a),
        };
        if first_tag(&this.tokens, word).is_none() {
            continue;
        }
        occurring += 1;
        let rest = without(&this.tokens, word);
        if rest.is_empty() {
            blocked += 1;
            continue;
        }
        let Ok(sim) = cosine_sim(&embed(&rest), &embed(&other.tokens)) else {
            blocked += 1;
            continue;
        };
        if best.is_none_or(|(v, _)| sim < v) {
            best = Some((sim, side));
        }
    }
    if occurring == blocked {
        return None;
    }
    let (min_sim, side) = best?;
    // A sentence without the word is unchanged by its removal.
    let min_sim = if occurring < 2 { min_sim.min(base) } else { min_sim };
    let tokens = match side {
        Side::A => &a.tokens,
        Side::B => &b.tokens,
    };
    Some((base - min_sim, first_tag(tokens, word)?))
}

/// Find the word whose removal maximally reduces the pair similarity. Ties go
/// to the earliest first occurrence.
pub fn relevant_word<F>(
    pair_id: &str,
    a: &TaggedSentence,
    b: &TaggedSentence,
    embed: F,
) -> Result<RelevanceResult, RelevanceError>
where
    F: Fn(&[TaggedToken]) -> Vec<f64>,
{
    if a.tokens.len() < 2 || b.tokens.len() < 2 {
        return Err(RelevanceError::TooShort);
    }
    let base = cosine_sim(&embed(&a.tokens), &embed(&b.tokens)).map_err(|_| RelevanceError::DegeneratePair)?;
    let mut best: Option<RelevanceResult> = None;
    for word in candidates(a, b) {
        let Some((drop, pos)) = score_word(a, b, base, &word, &embed) else {
            continue;
        };
        if best.as_ref().is_none_or(|r| drop > r.drop) {
            best = Some(RelevanceResult {
                pair_id: pair_id.to_string(),
                word,
                pos,
                drop,
            });
        }
    }
    best.ok_or(RelevanceError::NoCandidate)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub pairs: usize,
    pub selected: usize,
    pub analyzed: usize,
    pub skipped_degenerate: usize,
    pub skipped_other: usize,
}

/// Run [`relevant_word`] over every pair whose gold score reaches `min_score`
/// (pairs without a score are always kept).
pub fn analyze_pairs<F>(pairs: &[TaggedPair], embed: F, min_score: f64) -> (Vec<RelevanceResult>, AnalysisReport)
where
    F: Fn(&[TaggedToken]) -> Vec<f64>,
{
    let mut report = AnalysisReport {
        pairs: pairs.len(),
        ..Default::default()
    };
    let mut results = Vec::new();
    for p in pairs.iter().filter(|p| p.score.is_none_or(|s| s >= min_score)) {
        report.selected += 1;
        match relevant_word(&p.id, &p.a, &p.b, &embed) {
            Ok(r) => results.push(r),
            Err(RelevanceError::DegeneratePair) => report.skipped_degenerate += 1,
            Err(_) => report.skipped_other += 1,
        }
    }
    report.analyzed = results.len();
    (results, report)
}

/// Fraction of results per POS tag.
pub fn pos_histogram(results: &[RelevanceResult]) -> Result<BTreeMap<Pos, f64>, RelevanceError> {
    if results.is_empty() {
        return Err(RelevanceError::EmptyInput);
    }
    let mut counts: BTreeMap<Pos, usize> = BTreeMap::new();
    for r in results {
        *counts.entry(r.pos).or_default() += 1;
    }
    let total = results.len() as f64;
    Ok(counts.into_iter().map(|(p, c)| (p, c as f64 / total)).collect())
}

/// `pos,fraction` CSV, rows by descending fraction then tag.
pub fn histogram_csv(hist: &BTreeMap<Pos, f64>) -> String {
    let mut rows: Vec<(&Pos, &f64)> = hist.iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let mut out = String::from("pos,fraction\n");
    for (pos, frac) in rows {
        let _ = writeln!(out, "{pos},{frac}");
    }
    out
}
