//! STS and retrieval evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::cosine_sim;
use crate::corpus::{DocumentRecord, QrelRecord, QueryRecord, SentencePair};
use crate::encoder::{EncoderError, EncoderParams};

pub const DEFAULT_CUTOFFS: [usize; 2] = [1, 5];

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rank correlation needs at least two non-constant values")]
    DegenerateInput,
    #[error("pair {0} has no gold score")]
    MissingScore(usize),
    #[error("query {0} has no relevant document")]
    NoRelevant(String),
    #[error("query and document encoders disagree on dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cutoff must be at least 1")]
    InvalidCutoff,
    #[error("invalid run: {0}")]
    Validation(String),
    #[error("text {0:?} encodes to a zero vector")]
    ZeroEmbedding(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::DegenerateInput);
    }
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(MetricsError::DegenerateInput)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub name: String,
    pub pairs: usize,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsReport {
    pub subsets: Vec<SubsetScore>,
    /// Correlation over every pair of every subset pooled together.
    pub all: f64,
    pub pairs: usize,
}

impl StsReport {
    pub fn to_table(&self) -> String {
        let width = self.subsets.iter().map(|s| s.name.len()).max().unwrap_or(0).max(3);
        let mut out = format!("{:<width$}  {:>7}  {:>8}\n", "set", "pairs", "spearman");
        for s in &self.subsets {
            let _ = writeln!(out, "{:<width$}  {:>7}  {:>8.4}", s.name, s.pairs, s.spearman);
        }
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>8.4}", "all", self.pairs, self.all);
        out
    }
}

/// Cosine similarity of the two encoder outputs (no dropout) for each pair.
pub fn predict_similarities(model: &EncoderParams, pairs: &[SentencePair]) -> Result<Vec<f64>, MetricsError> {
    pairs
        .par_iter()
        .map(|p| {
            let a = model.embed_text(&p.s1, None)?;
            let b = model.embed_text(&p.s2, None)?;
            cosine_sim(&a, &b).map_err(|_| MetricsError::ZeroEmbedding(p.s1.clone()))
        })
        .collect()
}

/// Spearman per subset and over the pooled pairs of all subsets.
pub fn evaluate_sts(model: &EncoderParams, subsets: &[(String, Vec<SentencePair>)]) -> Result<StsReport, MetricsError> {
    let mut all_pred = Vec::new();
    let mut all_gold = Vec::new();
    let mut scores = Vec::new();
    for (name, pairs) in subsets {
        let gold: Vec<f64> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| p.score.ok_or(MetricsError::MissingScore(i)))
            .collect::<Result<_, _>>()?;
        let pred = predict_similarities(model, pairs)?;
        scores.push(SubsetScore {
            name: name.clone(),
            pairs: pairs.len(),
            spearman: spearman(&pred, &gold)?,
        });
        all_pred.extend(pred);
        all_gold.extend(gold);
    }
    Ok(StsReport {
        subsets: scores,
        all: spearman(&all_pred, &all_gold)?,
        pairs: all_pred.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRanking {
    pub qid: String,
    /// `(doc id, score)` by descending score, ties by ascending doc id.
    pub ranking: Vec<(String, f64)>,
}

/// Ranked documents per query plus binary relevance judgments.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRun {
    pub queries: Vec<QueryRanking>,
    pub qrels: HashMap<(String, String), u8>,
}

/// Descending score, ties by ascending doc id.
pub fn rank_documents(scores: &mut [(String, f64)]) {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

impl RetrievalRun {
    pub fn from_qrels(queries: Vec<QueryRanking>, qrels: &[QrelRecord]) -> Self {
        RetrievalRun {
            queries,
            qrels: qrels.iter().map(|q| ((q.qid.clone(), q.did.clone()), q.rel)).collect(),
        }
    }

    pub fn is_relevant(&self, qid: &str, did: &str) -> bool {
        self.qrels
            .get(&(qid.to_string(), did.to_string()))
            .is_some_and(|&r| r > 0)
    }

    pub fn relevant_count(&self, qid: &str) -> usize {
        self.qrels.iter().filter(|((q, _), &r)| q == qid && r > 0).count()
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for q in &self.queries {
            if q.ranking.iter().any(|(_, s)| !s.is_finite()) {
                return Err(MetricsError::Validation(format!(
                    "query {} has a non-finite score",
                    q.qid
                )));
            }
            let ordered = q
                .ranking
                .windows(2)
                .all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
            if !ordered {
                return Err(MetricsError::Validation(format!(
                    "query {} ranking is not sorted",
                    q.qid
                )));
            }
            if self.relevant_count(&q.qid) == 0 {
                return Err(MetricsError::NoRelevant(q.qid.clone()));
            }
        }
        if let Some(r) = self.qrels.values().find(|&&r| r > 1) {
            return Err(MetricsError::Validation(format!("relevance {r} is not binary")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub queries: usize,
    pub mrr: f64,
    pub map: f64,
    /// Mean precision at each cutoff.
    pub precision: BTreeMap<usize, f64>,
}

impl RetrievalReport {
    pub fn to_table(&self) -> String {
        let mut rows = vec![("MRR".to_string(), self.mrr), ("MAP".to_string(), self.map)];
        rows.extend(self.precision.iter().map(|(n, v)| (format!("P@{n}"), *v)));
        let mut out = format!("{:<6}  {:>7}\n", "metric", "value");
        for (name, v) in rows {
            let _ = writeln!(out, "{name:<6}  {v:>7.4}");
        }
        out
    }
}

/// MRR, MAP (AP normalised by the total relevant per query), and mean P@N.
pub fn retrieval_metrics(run: &RetrievalRun, cutoffs: &[usize]) -> Result<RetrievalReport, MetricsError> {
    if cutoffs.contains(&0) {
        return Err(MetricsError::InvalidCutoff);
    }
    run.validate()?;
    let nq = run.queries.len();
    let mut mrr = 0.0;
    let mut map = 0.0;
    let mut precision: BTreeMap<usize, f64> = cutoffs.iter().map(|&n| (n, 0.0)).collect();
    for q in &run.queries {
        let hits: Vec<bool> = q.ranking.iter().map(|(d, _)| run.is_relevant(&q.qid, d)).collect();
        if let Some(first) = hits.iter().position(|&h| h) {
            mrr += 1.0 / (first + 1) as f64;
        }
        let mut found = 0usize;
        let mut ap = 0.0;
        for (i, &h) in hits.iter().enumerate() {
            if h {
                found += 1;
                ap += found as f64 / (i + 1) as f64;
            }
        }
        map += ap / run.relevant_count(&q.qid) as f64;
        for (&n, p) in precision.iter_mut() {
            *p += hits.iter().take(n).filter(|&&h| h).count() as f64 / n as f64;
        }
    }
    let denom = nq.max(1) as f64;
    precision.values_mut().for_each(|p| *p /= denom);
    Ok(RetrievalReport {
        queries: nq,
        mrr: mrr / denom,
        map: map / denom,
        precision,
    })
}

/// Encode queries and documents with independent encoders, rank documents by
/// cosine similarity, and score the ranking against the qrels.
pub fn run_two_tower_eval(
    query_model: &EncoderParams,
    doc_model: &EncoderParams,
    queries: &[QueryRecord],
    docs: &[DocumentRecord],
    qrels: &[QrelRecord],
    cutoffs: &[usize],
) -> Result<RetrievalReport, MetricsError> {
    if query_model.dim != doc_model.dim {
        return Err(MetricsError::DimensionMismatch(query_model.dim, doc_model.dim));
    }
    let qids: HashSet<&str> = queries.iter().map(|q| q.qid.as_str()).collect();
    let dids: HashSet<&str> = docs.iter().map(|d| d.did.as_str()).collect();
    for r in qrels {
        if !qids.contains(r.qid.as_str()) {
            return Err(MetricsError::Validation(format!(
                "qrels mention unknown query {}",
                r.qid
            )));
        }
        if !dids.contains(r.did.as_str()) {
            return Err(MetricsError::Validation(format!(
                "qrels mention unknown document {}",
                r.did
            )));
        }
    }
    let encode = |model: &EncoderParams, text: &str| -> Result<Vec<f64>, MetricsError> {
        let v = model.embed_text(text, None)?.0;
        if v.iter().all(|&x| x == 0.0) {
            return Err(MetricsError::ZeroEmbedding(text.to_string()));
        }
        Ok(v)
    };
    let doc_vecs: Vec<Vec<f64>> = docs
        .par_iter()
        .map(|d| encode(doc_model, &d.text))
        .collect::<Result<_, _>>()?;
    let rankings: Vec<QueryRanking> = queries
        .par_iter()
        .map(|q| {
            let qv = encode(query_model, &q.text)?;
            let mut ranking: Vec<(String, f64)> = docs
                .iter()
                .zip(&doc_vecs)
                .map(|(d, dv)| (d.did.clone(), cosine_sim(&qv, dv).unwrap_or(0.0)))
                .collect();
            rank_documents(&mut ranking);
            Ok(QueryRanking {
                qid: q.qid.clone(),
                ranking,
            })
        })
        .collect::<Result<_, MetricsError>>()?;
    retrieval_metrics(&RetrievalRun::from_qrels(rankings, qrels), cutoffs)
}
