//! Benchmark construction: back-translation BLEU1 filtering, dataset
//! statistics, and a cache-backed translator client.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::io::{self, IoError};

/// Environment variable overriding the translation-cache directory.
pub const CACHE_DIR_ENV: &str = "JCSEKIT_CACHE_DIR";
pub const CACHE_FILE: &str = "translations.jsonl";
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("record {0} has an empty source sentence")]
    EmptySource(String),
    #[error("translation backend failed: {0}")]
    Backend(String),
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Brevity-penalised clipped unigram precision after lowercasing and
/// whitespace tokenization. An empty candidate scores 0.
pub fn bleu1(candidate: &str, reference: &str) -> f64 {
    let cand = tokens(candidate);
    let refs = tokens(reference);
    if cand.is_empty() {
        return 0.0;
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in &refs {
        *ref_counts.entry(t).or_default() += 1;
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for t in &cand {
        *cand_counts.entry(t).or_default() += 1;
    }
    let clipped: usize = cand_counts
        .iter()
        .map(|(t, &c)| c.min(ref_counts.get(t).copied().unwrap_or(0)))
        .sum();
    let precision = clipped as f64 / cand.len() as f64;
    let bp = if cand.len() > refs.len() {
        1.0
    } else {
        (1.0 - refs.len() as f64 / cand.len() as f64).exp()
    };
    bp * precision
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub id: String,
    pub src: String,
    #[serde(default)]
    pub fwd: String,
    #[serde(default)]
    pub back: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub before: usize,
    pub after: usize,
    /// `[lo, hi, count]` over ten equal-width bins of [0, 1]; the last bin is closed.
    pub histogram: Vec<(f64, f64, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<TranslationRecord>,
    pub dropped: Vec<TranslationRecord>,
    pub report: FilterReport,
}

fn histogram(scores: &[f64]) -> Vec<(f64, f64, usize)> {
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &s in scores {
        let bin = ((s * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            (
                i as f64 / HISTOGRAM_BINS as f64,
                (i + 1) as f64 / HISTOGRAM_BINS as f64,
                c,
            )
        })
        .collect()
}

/// Score every record by BLEU1(back, src) and keep those strictly above
/// `threshold`.
pub fn score_and_filter(records: Vec<TranslationRecord>, threshold: f64) -> FilterOutcome {
    let before = records.len();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut scores = Vec::with_capacity(before);
    for mut r in records {
        let score = bleu1(&r.back, &r.src);
        r.bleu1 = Some(score);
        scores.push(score);
        if score > threshold {
            kept.push(r);
        } else {
            dropped.push(r);
        }
    }
    FilterOutcome {
        report: FilterReport {
            before,
            after: kept.len(),
            histogram: histogram(&scores),
        },
        kept,
        dropped,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileStats {
    pub path: String,
    pub pairs: usize,
    pub duplicate_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsTable {
    pub files: Vec<FileStats>,
    pub total: usize,
}

impl StatsTable {
    pub fn to_table(&self) -> String {
        let width = self.files.iter().map(|f| f.path.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>8}  {:>10}\n", "file", "pairs", "duplicates");
        for f in &self.files {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>10}\n",
                f.path, f.pairs, f.duplicate_pairs
            ));
        }
        out.push_str(&format!("{:<width$}  {:>8}\n", "total", self.total));
        out
    }
}

/// Either pair-file layout: `s1`/`s2` or `premise`/`hypothesis`.
#[derive(Deserialize)]
#[serde(untagged)]
enum AnyPair {
    Sts { s1: String, s2: String },
    Nli { premise: String, hypothesis: String },
}

/// Per-file and total pair counts; repeated `(s1, s2)` pairs within a file
/// are counted as duplicates.
pub fn assemble_stats(files: &[PathBuf]) -> Result<StatsTable, BenchmarkError> {
    let mut out = Vec::with_capacity(files.len());
    for path in files {
        let pairs: Vec<AnyPair> = io::read_jsonl(path)?;
        let mut seen = HashSet::new();
        let mut duplicates = 0;
        for p in &pairs {
            let key = match p {
                AnyPair::Sts { s1, s2 } => (s1.as_str(), s2.as_str()),
                AnyPair::Nli { premise, hypothesis } => (premise.as_str(), hypothesis.as_str()),
            };
            if !seen.insert(key) {
                duplicates += 1;
            }
        }
        out.push(FileStats {
            path: path.display().to_string(),
            pairs: pairs.len(),
            duplicate_pairs: duplicates,
        });
    }
    let total = out.iter().map(|f| f.pairs).sum();
    Ok(StatsTable { files: out, total })
}

/// A machine-translation service.
pub trait TranslationBackend: Sync {
    fn translate(&self, texts: &[String], direction: &str) -> Result<Vec<String>, BenchmarkError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub direction: String,
    pub text: String,
    pub translation: String,
}

/// Backend answering from a fixed table of `(direction, text) → translation`,
/// read from a file in the cache-entry format. Counts backend calls.
#[derive(Debug, Default)]
pub struct FixtureBackend {
    table: HashMap<(String, String), String>,
    calls: AtomicUsize,
}

impl FixtureBackend {
    pub fn new(entries: impl IntoIterator<Item = CacheEntry>) -> Self {
        FixtureBackend {
            table: entries
                .into_iter()
                .map(|e| ((e.direction, e.text), e.translation))
                .collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, BenchmarkError> {
        Ok(Self::new(io::read_jsonl::<CacheEntry>(path)?))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl TranslationBackend for FixtureBackend {
    fn translate(&self, texts: &[String], direction: &str) -> Result<Vec<String>, BenchmarkError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(&(direction.to_string(), t.clone()))
                    .cloned()
                    .ok_or_else(|| BenchmarkError::Backend(format!("no fixture for {direction}: {t:?}")))
            })
            .collect()
    }
}

/// Translator with an append-only JSON-lines cache. Cache hits never reach
/// the backend; misses are sent in one batch and appended in input order.
pub struct TranslatorClient<B> {
    backend: B,
    cache: RwLock<HashMap<(String, String), String>>,
    writer: Mutex<Option<BufWriter<File>>>,
    path: Option<PathBuf>,
}

impl<B: TranslationBackend> TranslatorClient<B> {
    /// Client without a persistent cache.
    pub fn in_memory(backend: B) -> Self {
        TranslatorClient {
            backend,
            cache: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            path: None,
        }
    }

    /// Client backed by the cache file at `path` (created when missing).
    pub fn with_cache_file(backend: B, path: &Path) -> Result<Self, BenchmarkError> {
        let entries: Vec<CacheEntry> = if path.exists() {
            io::read_jsonl(path)?
        } else {
            Vec::new()
        };
        let cache = entries
            .into_iter()
            .map(|e| ((e.direction, e.text), e.translation))
            .collect();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| IoError::io(path, e))?;
        Ok(TranslatorClient {
            backend,
            cache: RwLock::new(cache),
            writer: Mutex::new(Some(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
        })
    }

    /// Cache file under `$JCSEKIT_CACHE_DIR`, or under `default_dir` when unset.
    pub fn from_env(backend: B, default_dir: &Path) -> Result<Self, BenchmarkError> {
        let dir = std::env::var_os(CACHE_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| default_dir.to_path_buf());
        std::fs::create_dir_all(&dir).map_err(|e| IoError::io(&dir, e))?;
        Self::with_cache_file(backend, &dir.join(CACHE_FILE))
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn cache_path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn io_error(&self, e: std::io::Error) -> IoError {
        IoError::io(self.path.as_deref().unwrap_or(Path::new("")), e)
    }

    fn append(&self, w: &mut BufWriter<File>, entry: &CacheEntry) -> Result<(), IoError> {
        serde_json::to_writer(&mut *w, entry)?;
        w.write_all(b"\n").map_err(|e| self.io_error(e))
    }

    pub fn translate(&self, texts: &[String], direction: &str) -> Result<Vec<String>, BenchmarkError> {
        let mut out: Vec<Option<String>> = {
            let cache = self.cache.read().expect("cache lock poisoned");
            texts
                .iter()
                .map(|t| cache.get(&(direction.to_string(), t.clone())).cloned())
                .collect()
        };
        let mut missing: Vec<String> = Vec::new();
        for (t, o) in texts.iter().zip(&out) {
            if o.is_none() && !missing.contains(t) {
                missing.push(t.clone());
            }
        }
        if !missing.is_empty() {
            let translated = self.backend.translate(&missing, direction)?;
            if translated.len() != missing.len() {
                return Err(BenchmarkError::Backend(format!(
                    "backend returned {} translations for {} texts",
                    translated.len(),
                    missing.len()
                )));
            }
            let mut cache = self.cache.write().expect("cache lock poisoned");
            let mut writer = self.writer.lock().expect("writer lock poisoned");
            for (text, translation) in missing.iter().zip(translated) {
                if let Some(w) = writer.as_mut() {
                    let entry = CacheEntry {
                        direction: direction.to_string(),
                        text: text.clone(),
                        translation: translation.clone(),
                    };
                    self.append(w, &entry)?;
                }
                cache.insert((direction.to_string(), text.clone()), translation);
            }
            if let Some(w) = writer.as_mut() {
                w.flush().map_err(|e| self.io_error(e))?;
            }
            for (t, o) in texts.iter().zip(out.iter_mut()) {
                if o.is_none() {
                    *o = cache.get(&(direction.to_string(), t.clone())).cloned();
                }
            }
        }
        Ok(out.into_iter().map(|o| o.unwrap_or_default()).collect())
    }
}

/// Forward-translate every source sentence, translate the result back, and
/// return records ready for [`score_and_filter`].
pub fn back_translate<B: TranslationBackend>(
    client: &TranslatorClient<B>,
    sources: &[(String, String)],
    forward: &str,
    backward: &str,
) -> Result<Vec<TranslationRecord>, BenchmarkError> {
    if let Some((id, _)) = sources.iter().find(|(_, s)| s.is_empty()) {
        return Err(BenchmarkError::EmptySource(id.clone()));
    }
    let src: Vec<String> = sources.iter().map(|(_, s)| s.clone()).collect();
    let fwd = client.translate(&src, forward)?;
    let back = client.translate(&fwd, backward)?;
    Ok(sources
        .iter()
        .zip(fwd.into_iter().zip(back))
        .map(|((id, s), (f, b))| TranslationRecord {
            id: id.clone(),
            src: s.clone(),
            fwd: f,
            back: b,
            bleu1: None,
        })
        .collect())
}
