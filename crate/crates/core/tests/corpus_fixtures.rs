use std::path::PathBuf;

use jcse_core::corpus::{
    load_nli_records, load_tagged_corpus, write_tagged_corpus, CorpusError, NliLabel, NliRecord, Pos, TaggedSentence,
    TaggedToken,
};
use jcse_core::io::write_jsonl;
use jcse_core::trainer::build_nli_triplets;
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn three_line_fixture_loads() {
    let corpus = load_tagged_corpus(&fixture("tagged_valid.jsonl")).unwrap();
    assert_eq!(corpus.len(), 3);
    assert_eq!(corpus[0].id, "line-1");
    for s in &corpus {
        assert_eq!(s.surface(), s.text);
    }
}

#[test]
fn overlapping_spans_are_rejected_with_line() {
    match load_tagged_corpus(&fixture("tagged_overlap.jsonl")) {
        Err(CorpusError::Validation { line, violation }) => {
            assert_eq!(line, 2);
            assert!(violation.contains("overlaps"), "{violation}");
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn span_past_token_count_is_rejected() {
    match load_tagged_corpus(&fixture("tagged_out_of_bounds.jsonl")) {
        Err(CorpusError::Validation { line, violation }) => {
            assert_eq!(line, 2);
            assert!(violation.contains("exceeds token count 3"), "{violation}");
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn adapter_fixture_validates() {
    let corpus = load_tagged_corpus(&fixture("pos_adapter_50.jsonl")).unwrap();
    assert_eq!(corpus.len(), 50);
    for (i, s) in corpus.iter().enumerate() {
        assert_eq!(s.id, format!("line-{}", i + 1));
        assert!(!s.noun_chunks.is_empty());
        assert_eq!(s.surface(), s.text);
    }
}

fn arb_sentence() -> impl Strategy<Value = TaggedSentence> {
    let token = ("[あ-んア-ン一-龥a-z]{1,3}", prop::sample::select(Pos::ALL.to_vec()))
        .prop_map(|(s, p)| TaggedToken::new(s, p));
    (prop::collection::vec(token, 1..12), any::<u16>()).prop_map(|(tokens, id)| {
        let mut noun_chunks = Vec::new();
        let mut j = 0;
        while j < tokens.len() {
            if tokens[j].pos.is_nominal() {
                let start = j;
                while j < tokens.len() && tokens[j].pos.is_nominal() {
                    j += 1;
                }
                noun_chunks.push((start, j));
            } else {
                j += 1;
            }
        }
        TaggedSentence {
            id: format!("line-{id}"),
            text: tokens.iter().map(|t| t.surface.as_str()).collect(),
            tokens,
            noun_chunks,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn serialize_then_load_is_identity(corpus in prop::collection::vec(arb_sentence(), 0..8)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_tagged_corpus(&path, &corpus).unwrap();
        prop_assert_eq!(load_tagged_corpus(&path).unwrap(), corpus);
    }
}

#[test]
fn nli_triplet_count_matches_enumeration() {
    let labels = [NliLabel::Entailment, NliLabel::Contradiction, NliLabel::Neutral];
    let records: Vec<NliRecord> = (0..100usize)
        .map(|i| NliRecord {
            premise: format!("前提{}", (i * 7) % 13),
            hypothesis: format!("仮説{i}"),
            label: labels[(i * i + i / 3) % 3],
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nli.jsonl");
    write_jsonl(&path, &records).unwrap();
    let loaded = load_nli_records(&path).unwrap();
    assert_eq!(loaded, records);

    let mut expected = 0;
    for p in &records {
        if records.iter().position(|r| r.premise == p.premise) != records.iter().position(|r| std::ptr::eq(r, p)) {
            continue;
        }
        for e in &records {
            for c in &records {
                if e.premise == p.premise
                    && c.premise == p.premise
                    && e.label == NliLabel::Entailment
                    && c.label == NliLabel::Contradiction
                {
                    expected += 1;
                }
            }
        }
    }
    let (triplets, report) = build_nli_triplets(&loaded);
    assert!(expected > 0);
    assert_eq!(triplets.len(), expected);
    assert_eq!(report.triplets, expected);
    for t in &triplets {
        let has = |h: &str, l: NliLabel| {
            records
                .iter()
                .any(|r| r.premise == t.anchor && r.hypothesis == h && r.label == l)
        };
        assert!(has(t.positive.as_deref().unwrap(), NliLabel::Entailment));
        assert!(has(&t.negative, NliLabel::Contradiction));
    }
}
