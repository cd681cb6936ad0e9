use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jcse_core::corpus::{StsRecord, TaggedSentence, Triplet};
use jcse_core::io::{read_jsonl, write_jsonl};
use jcse_core::synthetic::{planted_relevance, tagged_sentences, Domain};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jcse-kit"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .arg("--no-timestamp")
        .output()
        .unwrap()
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

const SUBCOMMANDS: [&str; 10] = [
    "normalize",
    "synthesize",
    "export-denoising",
    "train",
    "train-two-stage",
    "eval-sts",
    "eval-retrieval",
    "analyze-relevance",
    "bleu-filter",
    "stats",
];

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    for sub in SUBCOMMANDS {
        let out = bin().args([sub, "--help"]).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{sub}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    let out = bin()
        .args(["synthesize", "--corpus", "x", "--output", "y", "--generator", "file"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args([
            "train",
            "--triplets",
            "t",
            "--output",
            "o",
            "--corpus",
            "c",
            "--init",
            "i",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["stats", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let bad = fixture("tagged_overlap.jsonl");
    let out = run(
        dir.path(),
        &["synthesize", "--corpus", bad.to_str().unwrap(), "--output", "o.jsonl"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn two_stage_config_echo_uses_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(
        dir.path(),
        &[
            "train-two-stage",
            "--stage1",
            "a",
            "--stage2",
            "b",
            "--output",
            "m",
            "--corpus",
            "c",
            "--print-config",
        ],
    );
    assert_eq!(v["config"]["stage1"]["tau"], 0.05);
    assert_eq!(v["config"]["stage1"]["alpha"], 0.0);
    assert_eq!(v["config"]["stage2"]["tau"], 0.05);
    assert_eq!(v["config"]["stage2"]["alpha"], 1.0);
    assert_eq!(v["seed"], 42);
    assert!(v.get("timestamp").is_none());
}

#[test]
fn synthesize_defaults_to_four_negatives() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tagged_sentences(30, 1);
    write_jsonl(&dir.path().join("c.jsonl"), &corpus).unwrap();
    let v = ok_json(
        dir.path(),
        &["synthesize", "--corpus", "c.jsonl", "--output", "t.jsonl"],
    );
    let triplets: Vec<Triplet> = read_jsonl(&dir.path().join("t.jsonl")).unwrap();
    let chunked = corpus.iter().filter(|s| !s.noun_chunks.is_empty()).count();
    assert_eq!(v["k"], 4);
    assert_eq!(triplets.len(), 4 * (chunked - v["failed"].as_u64().unwrap() as usize));
    for anchor in corpus.iter().map(|s| &s.text) {
        let n = triplets.iter().filter(|t| &t.anchor == anchor).count();
        assert!(n == 0 || n == 4);
    }
}

#[test]
fn file_generator_reads_fills() {
    let dir = tempfile::tempdir().unwrap();
    let corpus: Vec<TaggedSentence> = read_jsonl(&fixture("tagged_valid.jsonl")).unwrap();
    write_jsonl(&dir.path().join("c.jsonl"), &corpus).unwrap();
    let fills: serde_json::Map<String, Value> = corpus
        .iter()
        .map(|s| {
            let one: Vec<String> = (0..s.noun_chunks.len()).map(|k| format!("X{k}")).collect();
            (s.id.clone(), serde_json::json!([one]))
        })
        .collect();
    std::fs::write(dir.path().join("fills.json"), Value::Object(fills).to_string()).unwrap();
    let v = ok_json(
        dir.path(),
        &[
            "synthesize",
            "--corpus",
            "c.jsonl",
            "--output",
            "t.jsonl",
            "--generator",
            "file",
            "--fills",
            "fills.json",
            "--k",
            "1",
        ],
    );
    assert_eq!(v["triplets"], 3);
    let triplets: Vec<Triplet> = read_jsonl(&dir.path().join("t.jsonl")).unwrap();
    assert!(triplets.iter().all(|t| t.negative.contains("X0")));
}

#[test]
fn normalize_and_denoise() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("raw.txt"), "ＡＢＣ  <b>強い</b>頭痛\n\n \u{0007}\n").unwrap();
    let v = ok_json(
        dir.path(),
        &["normalize", "--raw", "--input", "raw.txt", "--output", "n.txt"],
    );
    assert_eq!(v["output"], 1);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("n.txt")).unwrap(),
        "ABC 強い頭痛\n"
    );

    let adapter = fixture("pos_adapter_50.jsonl");
    let v = ok_json(
        dir.path(),
        &["normalize", "--input", adapter.to_str().unwrap(), "--output", "n.jsonl"],
    );
    assert_eq!(v["input"], 50);
    let v = ok_json(
        dir.path(),
        &["export-denoising", "--corpus", "n.jsonl", "--output", "d.jsonl"],
    );
    let rows: Vec<Value> = read_jsonl(&dir.path().join("d.jsonl")).unwrap();
    assert_eq!(rows.len() as u64, v["sentences"].as_u64().unwrap());
    assert!(rows.iter().all(|r| r["input"].is_string() && r["target"].is_string()));
}

#[test]
fn train_eval_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = Domain::new(6, 2);
    write_jsonl(&dir.path().join("corpus.jsonl"), &d.corpus).unwrap();
    write_jsonl(&dir.path().join("labeled.jsonl"), &d.labeled).unwrap();
    let v = ok_json(
        dir.path(),
        &[
            "train",
            "--triplets",
            "labeled.jsonl",
            "--corpus",
            "corpus.jsonl",
            "--output",
            "m.json",
            "--epochs",
            "2",
            "--dim",
            "8",
        ],
    );
    assert_eq!(v["report"]["epoch_losses"].as_array().unwrap().len(), 2);
    assert_eq!(v["config"]["alpha"], 0.0);

    let sts: Vec<StsRecord> = d
        .labeled
        .iter()
        .enumerate()
        .map(|(i, t)| StsRecord {
            s1: t.anchor.clone(),
            s2: if i % 2 == 0 {
                t.positive.clone().unwrap()
            } else {
                t.negative.clone()
            },
            score: Some(if i % 2 == 0 {
                4.0 + (i % 3) as f64 / 3.0
            } else {
                (i % 4) as f64 / 2.0
            }),
        })
        .collect();
    write_jsonl(&dir.path().join("dev.jsonl"), &sts[..12]).unwrap();
    write_jsonl(&dir.path().join("test.jsonl"), &sts[12..]).unwrap();
    let v = ok_json(
        dir.path(),
        &["eval-sts", "--model", "m.json", "dev.jsonl", "test.jsonl"],
    );
    assert_eq!(v["subsets"][0]["name"], "dev");
    assert_eq!(v["pairs"], sts.len());
    let out = run(dir.path(), &["eval-sts", "--model", "m.json", "dev.jsonl", "--table"]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("set") && table.contains("\nall "));

    let v = ok_json(dir.path(), &["stats", "dev.jsonl", "test.jsonl"]);
    assert_eq!(v["total"], sts.len());
}

#[test]
fn analyze_relevance_writes_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let (pairs, params) = planted_relevance(20, 4);
    write_jsonl(&dir.path().join("pairs.jsonl"), &pairs).unwrap();
    params.save(&dir.path().join("m.json")).unwrap();
    let v = ok_json(
        dir.path(),
        &[
            "analyze-relevance",
            "--model",
            "m.json",
            "--pairs",
            "pairs.jsonl",
            "--output",
            "r.jsonl",
            "--histogram",
            "h.csv",
        ],
    );
    assert_eq!(v["analyzed"], 20);
    let csv = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert!(csv.starts_with("pos,fraction\nNOUN,"));
}

#[test]
fn bleu_filter_with_cached_fixture_backend() {
    let dir = tempfile::tempdir().unwrap();
    let src = [("a", "猫が座った"), ("b", "雨だ")];
    let records: Vec<Value> = src
        .iter()
        .map(|(id, s)| serde_json::json!({"id": id, "src": s}))
        .collect();
    write_jsonl(&dir.path().join("in.jsonl"), &records).unwrap();
    let entries = [
        ("ja-en", "猫が座った", "the cat sat"),
        ("ja-en", "雨だ", "it rains"),
        ("en-ja", "the cat sat", "猫が座った"),
        ("en-ja", "it rains", "雨 が 降る"),
    ];
    let entries: Vec<Value> = entries
        .iter()
        .map(|(d, t, tr)| serde_json::json!({"direction": d, "text": t, "translation": tr}))
        .collect();
    write_jsonl(&dir.path().join("fixture.jsonl"), &entries).unwrap();
    let cache = dir.path().join("cache");
    let args = [
        "bleu-filter",
        "--input",
        "in.jsonl",
        "--output",
        "kept.jsonl",
        "--dropped",
        "dropped.jsonl",
        "--translations",
        "fixture.jsonl",
        "--no-timestamp",
    ];
    let first = bin()
        .current_dir(dir.path())
        .env("JCSEKIT_CACHE_DIR", &cache)
        .args(args)
        .output()
        .unwrap();
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(cache.join("translations.jsonl").exists());
    let kept_first = std::fs::read(dir.path().join("kept.jsonl")).unwrap();
    let second = bin()
        .current_dir(dir.path())
        .env("JCSEKIT_CACHE_DIR", &cache)
        .args(args)
        .output()
        .unwrap();
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(kept_first, std::fs::read(dir.path().join("kept.jsonl")).unwrap());
    let v: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(v["before"], 2);
    assert_eq!(v["after"], 1);
}
