//! Contradiction synthesis by noun-chunk masking.
//!
//! Noun chunks are replaced by numbered sentinels and a [`Generator`] fills the
//! blanks with in-domain text; a fill that changes at least one chunk yields a
//! hard negative for the original sentence. The same sentinel rendering is used
//! for span-corruption denoising examples that can train an external
//! fill-in-the-blank model.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TaggedSentence, Triplet};
use crate::io::{self, IoError};
use crate::seed;

pub const MAX_SENTINELS: usize = 100;
/// Redraws allowed per output slot after the first draw.
pub const MAX_REDRAWS: usize = 50;
pub const DEFAULT_K: usize = 4;
pub const DEFAULT_MASK_RATE: f64 = 0.15;
pub const DEFAULT_MEAN_SPAN: usize = 3;

/// Literal rendering of sentinel `k`.
pub fn sentinel(k: usize) -> String {
    format!("<extra_id_{k}>")
}

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("sentence has no noun chunks")]
    NoChunks,
    #[error("{0} chunks exceed the sentinel limit of {MAX_SENTINELS}")]
    TooManyChunks(usize),
    #[error("no fill for sentinel {0}")]
    MissingFill(usize),
    #[error("sentence {sentence_id}: no differing fill after {MAX_REDRAWS} redraws for output {slot}")]
    ExhaustedRedraws { sentence_id: String, slot: usize },
    #[error("generator has no more candidates for sentence {0}")]
    GeneratorExhausted(String),
    #[error("generator has no entry for sentence {0}")]
    UnknownSentence(String),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Literal(String),
    Sentinel(usize),
}

/// A sentence with its noun chunks replaced by sentinels `0..K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedTemplate {
    pub pieces: Vec<Piece>,
    /// Original chunk surface per sentinel id.
    pub sentinel_map: Vec<String>,
}

impl MaskedTemplate {
    pub fn num_sentinels(&self) -> usize {
        self.sentinel_map.len()
    }

    /// Generator input: literals with `<extra_id_k>` in place of each chunk.
    pub fn render(&self) -> String {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Literal(s) => s.clone(),
                Piece::Sentinel(k) => sentinel(*k),
            })
            .collect()
    }

    pub fn literals(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Literal(s) => Some(s.as_str()),
            Piece::Sentinel(_) => None,
        })
    }
}

/// Replace every noun-chunk span of `s` with the next sentinel, left to right.
pub fn mask_noun_chunks(s: &TaggedSentence) -> Result<MaskedTemplate, DatagenError> {
    if s.noun_chunks.is_empty() {
        return Err(DatagenError::NoChunks);
    }
    if s.noun_chunks.len() > MAX_SENTINELS {
        return Err(DatagenError::TooManyChunks(s.noun_chunks.len()));
    }
    let mut pieces = Vec::new();
    let mut sentinel_map = Vec::with_capacity(s.noun_chunks.len());
    let mut literal = String::new();
    let mut cursor = 0;
    for &(start, end) in &s.noun_chunks {
        for t in &s.tokens[cursor..start] {
            literal.push_str(&t.surface);
        }
        if !literal.is_empty() {
            pieces.push(Piece::Literal(std::mem::take(&mut literal)));
        }
        pieces.push(Piece::Sentinel(sentinel_map.len()));
        sentinel_map.push(s.chunk_surface((start, end)));
        cursor = end;
    }
    for t in &s.tokens[cursor..] {
        literal.push_str(&t.surface);
    }
    if !literal.is_empty() {
        pieces.push(Piece::Literal(literal));
    }
    Ok(MaskedTemplate { pieces, sentinel_map })
}

/// Assemble a template with `fills[k]` in place of sentinel `k`.
pub fn fill_template<S: AsRef<str>>(t: &MaskedTemplate, fills: &[S]) -> Result<String, DatagenError> {
    let mut out = String::new();
    for p in &t.pieces {
        match p {
            Piece::Literal(s) => out.push_str(s),
            Piece::Sentinel(k) => out.push_str(fills.get(*k).ok_or(DatagenError::MissingFill(*k))?.as_ref()),
        }
    }
    Ok(out)
}

/// One request to a generator. `attempt` counts draws for this sentence so a
/// generator can return a different candidate on every redraw.
#[derive(Debug, Clone, Copy)]
pub struct FillRequest<'a> {
    pub sentence_id: &'a str,
    pub template: &'a MaskedTemplate,
    pub seed: u64,
    pub attempt: usize,
}

/// Fill-in-the-blank capability: one replacement per sentinel id.
pub trait Generator: Sync {
    fn fill(&self, request: &FillRequest<'_>) -> Result<Vec<String>, DatagenError>;
}

/// Frequency-weighted sampler over the noun-chunk surfaces of an in-domain corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconGenerator {
    entries: Vec<(String, usize)>,
    seed: u64,
}

impl LexiconGenerator {
    pub fn new(entries: Vec<(String, usize)>, seed: u64) -> Result<Self, DatagenError> {
        if entries.is_empty() || entries.iter().any(|(s, c)| s.is_empty() || *c == 0) {
            return Err(DatagenError::EmptyLexicon);
        }
        Ok(LexiconGenerator { entries, seed })
    }

    /// `(surface, count)`, by descending count then surface.
    pub fn entries(&self) -> &[(String, usize)] {
        &self.entries
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn sample(&self, rng: &mut ChaCha8Rng, exclude: Option<&str>) -> Option<&str> {
        let weight = |(s, c): &(String, usize)| if Some(s.as_str()) == exclude { 0 } else { *c };
        let total: usize = self.entries.iter().map(weight).sum();
        if total == 0 {
            return None;
        }
        let mut r = rng.random_range(0..total);
        for e in &self.entries {
            let w = weight(e);
            if r < w {
                return Some(&e.0);
            }
            r -= w;
        }
        unreachable!("draw below total weight")
    }
}

impl Generator for LexiconGenerator {
    /// Every slot is drawn from the lexicon; one randomly chosen slot excludes
    /// its original surface so most draws differ from the source sentence.
    fn fill(&self, req: &FillRequest<'_>) -> Result<Vec<String>, DatagenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(self.seed ^ req.seed, &[req.attempt as u64]));
        let map = &req.template.sentinel_map;
        let forced = rng.random_range(0..map.len());
        Ok(map
            .iter()
            .enumerate()
            .map(|(k, original)| {
                let exclude = (k == forced).then_some(original.as_str());
                self.sample(&mut rng, exclude).unwrap_or(original.as_str()).to_string()
            })
            .collect())
    }
}

/// Multiset of noun-chunk surfaces over a corpus.
pub fn build_lexicon(corpus: &[TaggedSentence]) -> Result<LexiconGenerator, DatagenError> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in corpus {
        for &span in &s.noun_chunks {
            *counts.entry(s.chunk_surface(span)).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(DatagenError::NoChunks);
    }
    let mut entries: Vec<(String, usize)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    LexiconGenerator::new(entries, 0)
}

/// Candidates produced outside this crate (for example by a seq2seq model),
/// keyed by sentence id. Each candidate lists one fill per sentinel.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileGenerator {
    candidates: HashMap<String, Vec<Vec<String>>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FillsEntry {
    Many(Vec<Vec<String>>),
    One(Vec<String>),
}

impl FileGenerator {
    pub fn new(candidates: HashMap<String, Vec<Vec<String>>>) -> Self {
        FileGenerator { candidates }
    }

    /// Load `{"sentence_id": [fills...]}` where the value is either one list of
    /// per-sentinel fills or a list of such lists (tried in order).
    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        let raw: HashMap<String, FillsEntry> = io::read_json(path)?;
        let candidates = raw
            .into_iter()
            .map(|(id, e)| {
                let list = match e {
                    FillsEntry::Many(v) => v,
                    FillsEntry::One(v) => vec![v],
                };
                (id, list)
            })
            .collect();
        Ok(FileGenerator { candidates })
    }
}

impl Generator for FileGenerator {
    fn fill(&self, req: &FillRequest<'_>) -> Result<Vec<String>, DatagenError> {
        let list = self
            .candidates
            .get(req.sentence_id)
            .ok_or_else(|| DatagenError::UnknownSentence(req.sentence_id.to_string()))?;
        list.get(req.attempt)
            .cloned()
            .ok_or_else(|| DatagenError::GeneratorExhausted(req.sentence_id.to_string()))
    }
}

/// A synthesized negative together with the fills that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synthesized {
    pub text: String,
    pub fills: Vec<String>,
}

/// Seed used for one sentence, derived from the global seed and its id.
pub fn sentence_seed(global: u64, sentence_id: &str) -> u64 {
    seed::derive(global, &format!("synthesize/{sentence_id}"))
}

/// `k` pairwise-distinct contradictions of `s`. Draws that reproduce the
/// original chunks (or the original text) or repeat an earlier output are
/// rejected; each output slot allows [`MAX_REDRAWS`] redraws.
pub fn synthesize_contradictions(
    s: &TaggedSentence,
    generator: &dyn Generator,
    k: usize,
    seed: u64,
) -> Result<Vec<Synthesized>, DatagenError> {
    if k == 0 {
        return Err(DatagenError::ZeroK);
    }
    let template = mask_noun_chunks(s)?;
    let original = fill_template(&template, &template.sentinel_map)?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(k);
    let mut attempt = 0;
    for slot in 0..k {
        let exhausted = || DatagenError::ExhaustedRedraws {
            sentence_id: s.id.clone(),
            slot,
        };
        let mut accepted = None;
        for _ in 0..=MAX_REDRAWS {
            let request = FillRequest {
                sentence_id: &s.id,
                template: &template,
                seed,
                attempt,
            };
            attempt += 1;
            let fills = match generator.fill(&request) {
                Ok(f) => f,
                Err(DatagenError::GeneratorExhausted(_)) => return Err(exhausted()),
                Err(e) => return Err(e),
            };
            let text = fill_template(&template, &fills)?;
            let identical = fills[..template.num_sentinels()] == template.sentinel_map[..];
            if identical || text == original || text == s.text || seen.contains(&text) {
                continue;
            }
            accepted = Some(Synthesized {
                text,
                fills: fills[..template.num_sentinels()].to_vec(),
            });
            break;
        }
        let found = accepted.ok_or_else(exhausted)?;
        seen.insert(found.text.clone());
        out.push(found);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub sentences: usize,
    pub skipped_no_chunks: usize,
    pub failed: usize,
    pub triplets: usize,
}

/// Stage-one triplets: `k` synthesized negatives per sentence, positive left
/// empty for dropout construction. Sentences without chunks, or whose
/// synthesis fails, are skipped and counted.
pub fn build_stage1_triplets(
    corpus: &[TaggedSentence],
    generator: &dyn Generator,
    k: usize,
    seed: u64,
) -> (Vec<Triplet>, Stage1Report) {
    let outcomes: Vec<Result<Vec<Triplet>, DatagenError>> = corpus
        .par_iter()
        .map(|s| {
            let negatives = synthesize_contradictions(s, generator, k, sentence_seed(seed, &s.id))?;
            Ok(negatives
                .into_iter()
                .map(|n| Triplet {
                    anchor: s.text.clone(),
                    positive: None,
                    negative: n.text,
                })
                .collect())
        })
        .collect();
    let mut report = Stage1Report {
        sentences: corpus.len(),
        ..Default::default()
    };
    let mut triplets = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(t) => triplets.extend(t),
            Err(DatagenError::NoChunks) => report.skipped_no_chunks += 1,
            Err(_) => report.failed += 1,
        }
    }
    report.triplets = triplets.len();
    (triplets, report)
}

/// Span-corruption training pair. Serialized as `{"input": .., "target": ..}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoisingExample {
    pub input: String,
    pub target: String,
    /// Masked token spans `[start, end)` in the source sentence.
    #[serde(skip)]
    pub spans: Vec<(usize, usize)>,
}

impl DenoisingExample {
    pub fn masked_tokens(&self) -> usize {
        self.spans.iter().map(|(a, b)| b - a).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoisingReport {
    pub sentences: usize,
    pub masked_tokens: usize,
    pub unmasked_sentences: usize,
}

fn geometric(rng: &mut ChaCha8Rng, mean: usize) -> usize {
    if mean <= 1 {
        return 1;
    }
    let p = 1.0 / mean as f64;
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    1 + (u.ln() / (1.0 - p).ln()).floor() as usize
}

/// Masked spans for a sentence of `n` tokens with exactly `masked` tokens
/// covered. Spans are non-adjacent whenever enough unmasked tokens exist.
fn sample_spans(rng: &mut ChaCha8Rng, n: usize, masked: usize, mean_span: usize) -> Vec<(usize, usize)> {
    let mut lengths = Vec::new();
    let mut total = 0;
    while total < masked {
        let l = geometric(rng, mean_span).min(masked - total);
        lengths.push(l);
        total += l;
    }
    let unmasked = n - masked;
    // k spans need k - 1 separating tokens and k + 1 sentinels in the target.
    while lengths.len() > 1 && (lengths.len() - 1 > unmasked || lengths.len() + 1 > MAX_SENTINELS) {
        let last = lengths.pop().unwrap_or(0);
        *lengths.last_mut().expect("at least one span") += last;
    }
    let k = lengths.len();
    let mut gaps = vec![0usize; k + 1];
    for g in gaps.iter_mut().take(k).skip(1) {
        *g = 1;
    }
    for _ in 0..unmasked - (k - 1) {
        gaps[rng.random_range(0..=k)] += 1;
    }
    let mut spans = Vec::with_capacity(k);
    let mut cursor = 0;
    for (i, len) in lengths.into_iter().enumerate() {
        cursor += gaps[i];
        spans.push((cursor, cursor + len));
        cursor += len;
    }
    spans
}

/// Render one sentence with the given spans masked.
pub fn render_denoising(tokens: &[&str], spans: &[(usize, usize)]) -> DenoisingExample {
    let mut input = String::new();
    let mut target = String::new();
    let mut cursor = 0;
    for (i, &(a, b)) in spans.iter().enumerate() {
        input.extend(tokens[cursor..a].iter().copied());
        input.push_str(&sentinel(i));
        target.push_str(&sentinel(i));
        target.extend(tokens[a..b].iter().copied());
        cursor = b;
    }
    input.extend(tokens[cursor..].iter().copied());
    if !spans.is_empty() {
        target.push_str(&sentinel(spans.len()));
    }
    DenoisingExample {
        input,
        target,
        spans: spans.to_vec(),
    }
}

/// Span-corruption examples masking `round(mask_rate · n)` tokens per
/// sentence in spans of geometric length with mean `mean_span`.
pub fn make_denoising_examples(
    corpus: &[TaggedSentence],
    mask_rate: f64,
    mean_span: usize,
    seed: u64,
) -> (Vec<DenoisingExample>, DenoisingReport) {
    let mut report = DenoisingReport {
        sentences: corpus.len(),
        ..Default::default()
    };
    let examples: Vec<DenoisingExample> = corpus
        .iter()
        .map(|s| {
            let tokens = s.surfaces();
            let n = tokens.len();
            let masked = ((mask_rate.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
            if masked == 0 {
                report.unmasked_sentences += 1;
                return render_denoising(&tokens, &[]);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &format!("denoise/{}", s.id)));
            let spans = sample_spans(&mut rng, n, masked, mean_span);
            report.masked_tokens += masked;
            render_denoising(&tokens, &spans)
        })
        .collect();
    (examples, report)
}
