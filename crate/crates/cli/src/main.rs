//! `jcse-kit`: corpus preparation, contradiction synthesis, two-stage
//! contrastive training, evaluation, and benchmark filtering.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod report;

#[derive(Debug, Parser)]
#[command(name = "jcse-kit", version, about = "Contrastive sentence-embedding workbench")]
pub struct Cli {
    /// Global seed; each pipeline stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Omit the timestamp field from reports.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// Print reports as human-readable tables instead of JSON.
    #[arg(long, global = true)]
    pub table: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a tagged corpus (or raw text lines) and drop short sentences.
    Normalize(NormalizeArgs),
    /// Build stage-one triplets by noun-chunk masking and filling.
    Synthesize(SynthesizeArgs),
    /// Export span-corruption examples for an external fill-in model.
    ExportDenoising(DenoisingArgs),
    /// Train one contrastive stage.
    Train(TrainArgs),
    /// Stage one on synthesized triplets, then stage two on labeled triplets.
    TrainTwoStage(TwoStageArgs),
    /// Spearman correlation per STS file and over all files pooled.
    EvalSts(EvalStsArgs),
    /// MRR, MAP, and P@N of two-tower retrieval.
    EvalRetrieval(EvalRetrievalArgs),
    /// Most relevant content word per pair and its POS histogram.
    AnalyzeRelevance(RelevanceArgs),
    /// Score back-translations with BLEU1 and drop low-scoring records.
    BleuFilter(BleuFilterArgs),
    /// Pair counts of benchmark files.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Treat the input as plain text, one sentence per line.
    #[arg(long)]
    pub raw: bool,
    #[arg(long, default_value_t = jcse_core::corpus::MIN_TOKENS)]
    pub min_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorKind {
    Lexicon,
    File,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Tagged corpus of anchor sentences.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Negatives per anchor.
    #[arg(long, default_value_t = jcse_core::datagen::DEFAULT_K)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = GeneratorKind::Lexicon)]
    pub generator: GeneratorKind,
    /// Fills keyed by sentence id (required with `--generator file`).
    #[arg(long, required_if_eq("generator", "file"))]
    pub fills: Option<PathBuf>,
    /// Corpus for the lexicon generator (defaults to `--corpus`).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DenoisingArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = jcse_core::datagen::DEFAULT_MASK_RATE)]
    pub mask_rate: f64,
    #[arg(long, default_value_t = jcse_core::datagen::DEFAULT_MEAN_SPAN)]
    pub mean_span: usize,
}

/// Where initial parameters come from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct InitArgs {
    /// Tagged corpus to build a fresh vocabulary from.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub source: InitArgs,
    /// Embedding width of a fresh model.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Minimum token frequency for the fresh vocabulary.
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub triplets: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub stage: StageArgs,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TwoStageArgs {
    /// Synthesized (stage-one) triplets.
    #[arg(long)]
    pub stage1: PathBuf,
    /// Labeled (stage-two) triplets.
    #[arg(long)]
    pub stage2: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub stage: StageArgs,
    #[arg(long, default_value_t = 0.0)]
    pub alpha1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha2: f64,
    #[arg(long)]
    pub epochs1: Option<usize>,
    #[arg(long)]
    pub epochs2: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct EvalStsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// STS files; each is reported under its file stem.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    #[arg(long)]
    pub query_model: PathBuf,
    /// Document encoder (defaults to the query encoder).
    #[arg(long)]
    pub doc_model: Option<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub documents: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = jcse_core::metrics::DEFAULT_CUTOFFS)]
    pub cutoffs: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct RelevanceArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Tagged pairs, one JSON object per line.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// POS histogram CSV.
    #[arg(long)]
    pub histogram: PathBuf,
    #[arg(long, default_value_t = jcse_core::relevance::DEFAULT_MIN_SCORE)]
    pub min_score: f64,
}

#[derive(Debug, Args)]
pub struct BleuFilterArgs {
    /// Translation records (`id`, `src`, and `back` unless translating).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub dropped: Option<PathBuf>,
    /// Keep records scoring strictly above this.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    /// Translate `src` through this fixture backend before scoring.
    #[arg(long)]
    pub translations: Option<PathBuf>,
    #[arg(long, default_value = "ja-en")]
    pub forward: String,
    #[arg(long, default_value = "en-ja")]
    pub backward: String,
    /// Cache directory when JCSEKIT_CACHE_DIR is unset.
    #[arg(long, default_value = ".jcse-cache")]
    pub cache_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
