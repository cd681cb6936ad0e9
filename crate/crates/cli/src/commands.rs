use std::error::Error;
use std::fs;
use std::path::Path;

use jcse_core::benchmark::{
    assemble_stats, back_translate, score_and_filter, FixtureBackend, TranslationRecord, TranslatorClient,
};
use jcse_core::contrastive::TrainConfig;
use jcse_core::corpus::{
    filter_short, load_sts_pairs, load_tagged_corpus, load_triplets, normalize_sentence, normalize_text,
    write_tagged_corpus, DocumentRecord, QrelRecord, QueryRecord, TaggedToken,
};
use jcse_core::datagen::{build_lexicon, build_stage1_triplets, make_denoising_examples, FileGenerator, Generator};
use jcse_core::encoder::{build_vocab, init_params, EncoderParams};
use jcse_core::io::{read_jsonl, write_jsonl};
use jcse_core::metrics::{evaluate_sts, run_two_tower_eval};
use jcse_core::relevance::{analyze_pairs, histogram_csv, pos_histogram, TaggedPair};
use jcse_core::seed;
use jcse_core::trainer::{train_stage, two_stage_train};
use serde_json::{json, to_value, Value};

use crate::report::Reporter;
use crate::{
    BleuFilterArgs, Cli, Command, DenoisingArgs, EvalRetrievalArgs, EvalStsArgs, GeneratorKind, ModelArgs,
    NormalizeArgs, RelevanceArgs, StageArgs, StatsArgs, SynthesizeArgs, TrainArgs, TwoStageArgs,
};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

pub fn run(cli: &Cli) -> Result<()> {
    let r = Reporter {
        seed: cli.seed,
        timestamp: !cli.no_timestamp,
        table: cli.table,
    };
    let s = cli.seed;
    match &cli.command {
        Command::Normalize(a) => normalize(&r, a),
        Command::Synthesize(a) => synthesize(&r, a, s),
        Command::ExportDenoising(a) => export_denoising(&r, a, s),
        Command::Train(a) => train(&r, a, s),
        Command::TrainTwoStage(a) => train_two_stage(&r, a, s),
        Command::EvalSts(a) => eval_sts(&r, a),
        Command::EvalRetrieval(a) => eval_retrieval(&r, a),
        Command::AnalyzeRelevance(a) => analyze_relevance(&r, a),
        Command::BleuFilter(a) => bleu_filter(&r, a),
        Command::Stats(a) => stats(&r, a),
    }
}

fn normalize(r: &Reporter, a: &NormalizeArgs) -> Result<()> {
    if a.raw {
        let text = fs::read_to_string(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
        let lines: Vec<String> = text.lines().map(normalize_text).filter(|l| !l.is_empty()).collect();
        let mut out = lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        fs::write(&a.output, out).map_err(|e| format!("{}: {e}", a.output.display()))?;
        r.emit(
            "normalize",
            json!({"input": text.lines().count(), "output": lines.len()}),
            None,
        );
        return Ok(());
    }
    let corpus = load_tagged_corpus(&a.input)?;
    let normalized: Vec<_> = corpus.iter().map(normalize_sentence).collect();
    let kept = filter_short(&normalized, a.min_tokens);
    write_tagged_corpus(&a.output, &kept)?;
    r.emit(
        "normalize",
        json!({"input": corpus.len(), "output": kept.len(), "min_tokens": a.min_tokens}),
        None,
    );
    Ok(())
}

fn synthesize(r: &Reporter, a: &SynthesizeArgs, global: u64) -> Result<()> {
    let corpus = load_tagged_corpus(&a.corpus)?;
    let synth_seed = seed::derive(global, "synthesize");
    let generator: Box<dyn Generator> = match a.generator {
        GeneratorKind::Lexicon => {
            let source = match &a.lexicon {
                Some(p) => load_tagged_corpus(p)?,
                None => corpus.clone(),
            };
            Box::new(build_lexicon(&source)?.with_seed(seed::derive(global, "lexicon")))
        }
        GeneratorKind::File => {
            let path = a.fills.as_deref().ok_or("--fills is required with --generator file")?;
            Box::new(FileGenerator::load(path)?)
        }
    };
    let (triplets, report) = build_stage1_triplets(&corpus, generator.as_ref(), a.k, synth_seed);
    write_jsonl(&a.output, &triplets)?;
    let mut body = to_value(&report)?;
    body["k"] = a.k.into();
    r.emit("synthesize", body, None);
    Ok(())
}

fn export_denoising(r: &Reporter, a: &DenoisingArgs, global: u64) -> Result<()> {
    let corpus = load_tagged_corpus(&a.corpus)?;
    let (examples, report) =
        make_denoising_examples(&corpus, a.mask_rate, a.mean_span, seed::derive(global, "denoise"));
    write_jsonl(&a.output, &examples)?;
    r.emit("export-denoising", to_value(&report)?, None);
    Ok(())
}

fn initial_params(m: &ModelArgs, global: u64) -> Result<EncoderParams> {
    if let Some(path) = &m.source.init {
        return Ok(EncoderParams::load(path)?);
    }
    let path = m
        .source
        .corpus
        .as_deref()
        .ok_or("one of --corpus or --init is required")?;
    let vocab = build_vocab(&load_tagged_corpus(path)?, m.min_freq)?;
    Ok(init_params(vocab, m.dim, seed::derive(global, "init"))?)
}

fn stage_config(base: TrainConfig, s: &StageArgs, alpha: f64, epochs: Option<usize>, seed: u64) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        tau: s.tau.unwrap_or(base.tau),
        alpha,
        batch_size: s.batch_size.unwrap_or(base.batch_size),
        learning_rate: s.lr.unwrap_or(base.learning_rate),
        epochs: epochs.unwrap_or(base.epochs),
        seed,
        dropout: s.dropout.unwrap_or(base.dropout),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train(r: &Reporter, a: &TrainArgs, global: u64) -> Result<()> {
    let cfg = stage_config(
        TrainConfig::stage_one(),
        &a.stage,
        a.alpha,
        a.epochs,
        seed::derive(global, "train"),
    )?;
    let triplets = load_triplets(&a.triplets)?;
    let params = initial_params(&a.model, global)?;
    let (params, report) = train_stage(params, &triplets, &cfg)?;
    params.save(&a.output)?;
    r.emit("train", json!({"config": cfg, "report": report}), None);
    Ok(())
}

fn train_two_stage(r: &Reporter, a: &TwoStageArgs, global: u64) -> Result<()> {
    let cfg1 = stage_config(
        TrainConfig::stage_one(),
        &a.stage,
        a.alpha1,
        a.epochs1,
        seed::derive(global, "train/stage1"),
    )?;
    let cfg2 = stage_config(
        TrainConfig::stage_two(),
        &a.stage,
        a.alpha2,
        a.epochs2,
        seed::derive(global, "train/stage2"),
    )?;
    let config = json!({"stage1": cfg1, "stage2": cfg2});
    if a.print_config {
        r.emit("train-two-stage", json!({"config": config}), None);
        return Ok(());
    }
    let stage1 = load_triplets(&a.stage1)?;
    let stage2 = load_triplets(&a.stage2)?;
    let params = initial_params(&a.model, global)?;
    let (params, [r1, r2]) = two_stage_train(params, &stage1, &stage2, &cfg1, &cfg2)?;
    params.save(&a.output)?;
    r.emit(
        "train-two-stage",
        json!({"config": config, "stage1": r1, "stage2": r2, "checksum": params.checksum()}),
        None,
    );
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn eval_sts(r: &Reporter, a: &EvalStsArgs) -> Result<()> {
    let model = EncoderParams::load(&a.model)?;
    let subsets = a
        .files
        .iter()
        .map(|p| Ok((stem(p), load_sts_pairs(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_sts(&model, &subsets)?;
    r.emit("eval-sts", to_value(&report)?, Some(report.to_table()));
    Ok(())
}

fn eval_retrieval(r: &Reporter, a: &EvalRetrievalArgs) -> Result<()> {
    let query_model = EncoderParams::load(&a.query_model)?;
    let doc_model = match &a.doc_model {
        Some(p) => EncoderParams::load(p)?,
        None => query_model.clone(),
    };
    let queries: Vec<QueryRecord> = read_jsonl(&a.queries)?;
    let docs: Vec<DocumentRecord> = read_jsonl(&a.documents)?;
    let qrels: Vec<QrelRecord> = read_jsonl(&a.qrels)?;
    let report = run_two_tower_eval(&query_model, &doc_model, &queries, &docs, &qrels, &a.cutoffs)?;
    r.emit("eval-retrieval", to_value(&report)?, Some(report.to_table()));
    Ok(())
}

fn analyze_relevance(r: &Reporter, a: &RelevanceArgs) -> Result<()> {
    let model = EncoderParams::load(&a.model)?;
    let pairs: Vec<TaggedPair> = read_jsonl(&a.pairs)?;
    let embed = |tokens: &[TaggedToken]| {
        let surfaces: Vec<&str> = tokens.iter().map(|t| t.surface.as_str()).collect();
        model
            .embed(&surfaces, None)
            .map_or_else(|_| vec![0.0; model.dim], |e| e.0)
    };
    let (results, report) = analyze_pairs(&pairs, embed, a.min_score);
    write_jsonl(&a.output, &results)?;
    let hist = pos_histogram(&results)?;
    let csv = histogram_csv(&hist);
    fs::write(&a.histogram, &csv).map_err(|e| format!("{}: {e}", a.histogram.display()))?;
    let fractions: serde_json::Map<String, Value> = hist.iter().map(|(p, f)| (p.to_string(), (*f).into())).collect();
    let mut body = to_value(&report)?;
    body["histogram"] = Value::Object(fractions);
    r.emit("analyze-relevance", body, Some(csv));
    Ok(())
}

fn bleu_filter(r: &Reporter, a: &BleuFilterArgs) -> Result<()> {
    let mut records: Vec<TranslationRecord> = read_jsonl(&a.input)?;
    if let Some(fixture) = &a.translations {
        let client = TranslatorClient::from_env(FixtureBackend::load(fixture)?, &a.cache_dir)?;
        let sources: Vec<(String, String)> = records.iter().map(|t| (t.id.clone(), t.src.clone())).collect();
        records = back_translate(&client, &sources, &a.forward, &a.backward)?;
    }
    let outcome = score_and_filter(records, a.threshold);
    write_jsonl(&a.output, &outcome.kept)?;
    if let Some(p) = &a.dropped {
        write_jsonl(p, &outcome.dropped)?;
    }
    let mut body = to_value(&outcome.report)?;
    body["threshold"] = a.threshold.into();
    r.emit("bleu-filter", body, None);
    Ok(())
}

fn stats(r: &Reporter, a: &StatsArgs) -> Result<()> {
    let table = assemble_stats(&a.files)?;
    r.emit("stats", to_value(&table)?, Some(table.to_table()));
    Ok(())
}
