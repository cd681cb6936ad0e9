//! Desk-scale sentence encoder.
//!
//! A sentence is encoded as `v = tanh(W·s + b)` where `s` is the mean of the
//! (optionally dropped-out) token embedding rows. Dropout is inverted dropout
//! whose Bernoulli draws are a pure function of `(seed, position, coordinate)`,
//! so two encodings of the same sentence under different seeds form a
//! dropout positive pair while staying reproducible.

use std::collections::{BTreeMap, HashMap};
use std::ops::Deref;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TaggedSentence;
use crate::io::{self, IoError};
use crate::seed;

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;
pub const CHECKPOINT_FORMAT: &str = "jcse-kit/1";
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("cannot encode an empty token sequence")]
    EmptyInput,
    #[error("embedding dimension must be at least 2, got {0}")]
    InvalidDim(usize),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidDropout(f64),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Surface-to-index mapping with `<unk>` reserved at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    surfaces: Vec<String>,
    index: HashMap<String, usize>,
    max_chars: usize,
}

impl Vocab {
    /// Build from an ordered surface list; `<unk>` is prepended.
    pub fn from_surfaces<I, S>(surfaces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![UNK.to_string()];
        all.extend(surfaces.into_iter().map(Into::into).filter(|s| s != UNK));
        let index = all.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let max_chars = all[1..].iter().map(|s| s.chars().count()).max().unwrap_or(0);
        Vocab {
            surfaces: all,
            index,
            max_chars,
        }
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, surface: &str) -> usize {
        self.index.get(surface).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.index.contains_key(surface)
    }

    pub fn surface(&self, id: usize) -> Option<&str> {
        self.surfaces.get(id).map(String::as_str)
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Segment raw text by greedy longest match against the vocabulary.
    /// Whitespace separates tokens and is dropped; a run of characters that
    /// starts no known surface becomes a single `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
        let mut out = Vec::new();
        let mut in_unknown = false;
        let mut i = 0;
        while i < chars.len() {
            if chars[i].1.is_whitespace() {
                in_unknown = false;
                i += 1;
                continue;
            }
            let longest = (1..=self.max_chars.min(chars.len() - i)).rev().find(|&len| {
                let piece = &text[byte_at(i)..byte_at(i + len)];
                self.index.contains_key(piece) && piece != UNK
            });
            match longest {
                Some(len) => {
                    let piece = &text[byte_at(i)..byte_at(i + len)];
                    out.push(self.index[piece]);
                    in_unknown = false;
                    i += len;
                }
                None => {
                    if !in_unknown {
                        out.push(UNK_ID);
                        in_unknown = true;
                    }
                    i += 1;
                }
            }
        }
        out
    }
}

/// Vocabulary of every surface with frequency ≥ `min_freq`, ordered by
/// descending frequency and then by surface.
pub fn build_vocab(corpus: &[TaggedSentence], min_freq: usize) -> Result<Vocab, EncoderError> {
    if corpus.is_empty() {
        return Err(EncoderError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for token in corpus.iter().flat_map(|s| &s.tokens) {
        *counts.entry(token.surface.as_str()).or_default() += 1;
    }
    let mut entries: Vec<(&str, usize)> = counts.into_iter().filter(|&(s, c)| c >= min_freq && s != UNK).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocab::from_surfaces(entries.into_iter().map(|(s, _)| s)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub seed: u64,
}

impl DropoutSpec {
    pub fn new(rate: f64, seed: u64) -> Result<Self, EncoderError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(EncoderError::InvalidDropout(rate));
        }
        Ok(DropoutSpec { rate, seed })
    }

    /// Multiplier applied to coordinate `coord` of the token at `position`:
    /// either 0 or `1 / (1 - rate)`.
    #[inline]
    pub fn factor(&self, position: usize, coord: usize) -> f64 {
        if self.rate == 0.0 {
            return 1.0;
        }
        let u = seed::unit_f64(seed::mix(self.seed, &[position as u64, coord as u64]));
        if u < self.rate {
            0.0
        } else {
            1.0 / (1.0 - self.rate)
        }
    }
}

/// Encoder output vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub vocab: Vocab,
    pub dim: usize,
    /// `|vocab| × dim`, row-major.
    pub embeddings: Vec<f64>,
    /// `dim × dim`, row-major: `projection[i * dim + j]` maps input `j` to output `i`.
    pub projection: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Embeddings uniform in [-0.1, 0.1], identity projection, zero bias.
pub fn init_params(vocab: Vocab, dim: usize, seed: u64) -> Result<EncoderParams, EncoderError> {
    if dim < 2 {
        return Err(EncoderError::InvalidDim(dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embeddings = (0..vocab.len() * dim).map(|_| rng.random_range(-0.1..=0.1)).collect();
    let mut projection = vec![0.0; dim * dim];
    for i in 0..dim {
        projection[i * dim + i] = 1.0;
    }
    Ok(EncoderParams {
        vocab,
        dim,
        embeddings,
        projection,
        bias: vec![0.0; dim],
    })
}

/// Intermediate values of one forward pass, reused by the backward pass.
struct Forward {
    pooled: Vec<f64>,
    output: Vec<f64>,
}

impl EncoderParams {
    pub fn row(&self, id: usize) -> &[f64] {
        &self.embeddings[id * self.dim..(id + 1) * self.dim]
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.embeddings[id * d..(id + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings
            .iter()
            .chain(&self.projection)
            .chain(&self.bias)
            .all(|x| x.is_finite())
    }

    fn forward(&self, ids: &[usize], dropout: Option<&DropoutSpec>) -> Result<Forward, EncoderError> {
        if ids.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        let d = self.dim;
        let mut pooled = vec![0.0; d];
        for (pos, &id) in ids.iter().enumerate() {
            let row = self.row(id);
            match dropout {
                Some(spec) => {
                    for k in 0..d {
                        pooled[k] += row[k] * spec.factor(pos, k);
                    }
                }
                None => {
                    for k in 0..d {
                        pooled[k] += row[k];
                    }
                }
            }
        }
        let inv = 1.0 / ids.len() as f64;
        pooled.iter_mut().for_each(|x| *x *= inv);
        let output = (0..d)
            .map(|i| {
                let w = &self.projection[i * d..(i + 1) * d];
                let z: f64 = w.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>() + self.bias[i];
                z.tanh()
            })
            .collect();
        Ok(Forward { pooled, output })
    }

    /// Encode vocabulary ids. Ids outside the vocabulary are treated as `<unk>`.
    pub fn embed_ids(&self, ids: &[usize], dropout: Option<&DropoutSpec>) -> Result<Embedding, EncoderError> {
        let ids = self.clamp_ids(ids);
        Ok(Embedding(self.forward(&ids, dropout)?.output))
    }

    /// Encode a token surface list; unknown surfaces map to `<unk>`.
    pub fn embed<S: AsRef<str>>(&self, tokens: &[S], dropout: Option<&DropoutSpec>) -> Result<Embedding, EncoderError> {
        self.embed_ids(&self.vocab.ids(tokens), dropout)
    }

    /// Encode raw text through [`Vocab::tokenize`].
    pub fn embed_text(&self, text: &str, dropout: Option<&DropoutSpec>) -> Result<Embedding, EncoderError> {
        self.embed_ids(&self.vocab.tokenize(text), dropout)
    }

    /// Gradient of `upstream · v` with respect to the parameters, under the
    /// same dropout mask as the matching forward call.
    pub fn embed_grad_ids(
        &self,
        ids: &[usize],
        dropout: Option<&DropoutSpec>,
        upstream: &[f64],
    ) -> Result<ParamGrad, EncoderError> {
        let ids = self.clamp_ids(ids);
        let fwd = self.forward(&ids, dropout)?;
        let d = self.dim;
        let dz: Vec<f64> = upstream
            .iter()
            .zip(&fwd.output)
            .map(|(u, v)| u * (1.0 - v * v))
            .collect();
        let mut projection = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                projection[i * d + j] = dz[i] * fwd.pooled[j];
            }
        }
        let mut d_pooled = vec![0.0; d];
        for i in 0..d {
            let w = &self.projection[i * d..(i + 1) * d];
            for j in 0..d {
                d_pooled[j] += w[j] * dz[i];
            }
        }
        let inv = 1.0 / ids.len() as f64;
        let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (pos, &id) in ids.iter().enumerate() {
            let row = rows.entry(id).or_insert_with(|| vec![0.0; d]);
            for k in 0..d {
                let f = dropout.map_or(1.0, |s| s.factor(pos, k));
                row[k] += d_pooled[k] * f * inv;
            }
        }
        Ok(ParamGrad {
            dim: d,
            rows,
            projection,
            bias: dz,
        })
    }

    pub fn embed_grad<S: AsRef<str>>(
        &self,
        tokens: &[S],
        dropout: Option<&DropoutSpec>,
        upstream: &[f64],
    ) -> Result<ParamGrad, EncoderError> {
        self.embed_grad_ids(&self.vocab.ids(tokens), dropout, upstream)
    }

    fn clamp_ids(&self, ids: &[usize]) -> Vec<usize> {
        let n = self.vocab.len();
        ids.iter().map(|&i| if i < n { i } else { UNK_ID }).collect()
    }

    /// Apply `θ ← θ − lr · g`.
    pub fn apply_gradient(&mut self, grad: &ParamGrad, learning_rate: f64) {
        for (&id, g) in &grad.rows {
            let row = self.row_mut(id);
            for (p, gi) in row.iter_mut().zip(g) {
                *p -= learning_rate * gi;
            }
        }
        for (p, gi) in self.projection.iter_mut().zip(&grad.projection) {
            *p -= learning_rate * gi;
        }
        for (p, gi) in self.bias.iter_mut().zip(&grad.bias) {
            *p -= learning_rate * gi;
        }
    }

    /// SHA-256 over the dimension, vocabulary, and the bit patterns of every parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for s in self.vocab.surfaces() {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        for x in self.embeddings.iter().chain(&self.projection).chain(&self.bias) {
            h.update(x.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            dim: self.dim,
            vocab: self.vocab.surfaces().to_vec(),
            embeddings: self.embeddings.chunks(self.dim).map(<[f64]>::to_vec).collect(),
            projection: self.projection.chunks(self.dim).map(<[f64]>::to_vec).collect(),
            bias: self.bias.clone(),
        };
        Ok(io::write_json(path, &doc)?)
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let doc: Checkpoint = io::read_json(path)?;
        doc.into_params()
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    dim: usize,
    vocab: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    projection: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Checkpoint {
    fn into_params(self) -> Result<EncoderParams, EncoderError> {
        let bad = |m: String| Err(EncoderError::Checkpoint(m));
        if self.format != CHECKPOINT_FORMAT {
            return bad(format!("unsupported format {:?}", self.format));
        }
        let d = self.dim;
        if d < 2 {
            return Err(EncoderError::InvalidDim(d));
        }
        if self.vocab.first().map(String::as_str) != Some(UNK) {
            return bad("vocabulary must start with <unk>".into());
        }
        if self.embeddings.len() != self.vocab.len() {
            return bad(format!(
                "{} embedding rows for {} vocabulary entries",
                self.embeddings.len(),
                self.vocab.len()
            ));
        }
        if self.projection.len() != d || self.bias.len() != d {
            return bad("projection/bias shape does not match dim".into());
        }
        if self.embeddings.iter().chain(&self.projection).any(|r| r.len() != d) {
            return bad("ragged matrix row".into());
        }
        let params = EncoderParams {
            vocab: Vocab::from_surfaces(self.vocab.into_iter().skip(1)),
            dim: d,
            embeddings: self.embeddings.concat(),
            projection: self.projection.concat(),
            bias: self.bias,
        };
        if !params.is_finite() {
            return bad("non-finite parameter".into());
        }
        Ok(params)
    }
}

/// Sparse parameter gradient: only touched embedding rows are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub dim: usize,
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub projection: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(dim: usize) -> Self {
        ParamGrad {
            dim,
            rows: BTreeMap::new(),
            projection: vec![0.0; dim * dim],
            bias: vec![0.0; dim],
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrad) {
        for (&id, g) in &other.rows {
            let row = self.rows.entry(id).or_insert_with(|| vec![0.0; self.dim]);
            row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        self.projection
            .iter_mut()
            .zip(&other.projection)
            .for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
    }

    pub fn is_zero(&self) -> bool {
        self.rows
            .values()
            .flatten()
            .chain(&self.projection)
            .chain(&self.bias)
            .all(|&x| x == 0.0)
    }
}
