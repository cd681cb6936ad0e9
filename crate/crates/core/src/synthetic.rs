//! Deterministic synthetic corpora for demos, benchmarks, and behavioral tests.
//!
//! [`Domain`] builds a small "target domain": semantic groups that share
//! non-noun templates and differ only in their noun chunks. Surfaces are
//! fixed-width three-character codes, so concatenated sentences segment
//! unambiguously under longest-match tokenization.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DocumentRecord, Pos, QrelRecord, QueryRecord, TaggedSentence, TaggedToken, Triplet};
use crate::encoder::{init_params, EncoderParams, Vocab};
use crate::relevance::TaggedPair;

/// Number of non-noun templates; the last two are reserved for evaluation.
pub const TEMPLATES: usize = 6;
pub const TRAIN_TEMPLATES: usize = 4;
const HELD_OUT_QUERY: usize = 4;
const HELD_OUT_DOC: usize = 5;
/// Non-noun tokens per template: two before the first chunk, one between, two after.
const TEMPLATE_WIDTH: usize = 5;

#[derive(Debug, Clone)]
pub struct Domain {
    pub groups: usize,
    /// One sentence per (group, training template).
    pub corpus: Vec<TaggedSentence>,
    /// Labeled triplets over training templates: same-group positive in a
    /// different template, other-group negative in the anchor's template.
    pub labeled: Vec<Triplet>,
    /// Triplets over the two held-out templates.
    pub held_out: Vec<Triplet>,
    pub queries: Vec<QueryRecord>,
    pub documents: Vec<DocumentRecord>,
    pub qrels: Vec<QrelRecord>,
}

fn template_token(template: usize, slot: usize) -> String {
    format!("t{template}{slot}")
}

fn noun_token(group: usize, which: usize) -> String {
    format!("{}{:02}", if which == 0 { 'n' } else { 'm' }, group)
}

fn template_pos(slot: usize) -> Pos {
    [Pos::Adj, Pos::Adp, Pos::Verb, Pos::Aux, Pos::Part][slot % 5]
}

/// Sentence for `group`'s nouns placed in `template`.
pub fn domain_sentence(id: String, group: usize, template: usize) -> TaggedSentence {
    let t = |slot| TaggedToken::new(template_token(template, slot), template_pos(slot));
    let tokens = vec![
        t(0),
        TaggedToken::new(noun_token(group, 0), Pos::Noun),
        t(1),
        t(2),
        TaggedToken::new(noun_token(group, 1), Pos::Noun),
        t(3),
        t(4),
    ];
    debug_assert_eq!(tokens.len(), TEMPLATE_WIDTH + 2);
    let noun_chunks = vec![(1, 2), (4, 5)];
    let text = tokens.iter().map(|t| t.surface.as_str()).collect();
    TaggedSentence {
        id,
        text,
        tokens,
        noun_chunks,
    }
}

fn text(group: usize, template: usize) -> String {
    domain_sentence(String::new(), group, template).text
}

impl Domain {
    /// Build a domain with `groups` semantic groups (at least 2).
    pub fn new(groups: usize, seed: u64) -> Self {
        assert!(groups >= 2, "need at least two groups");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = (0..groups)
            .flat_map(|g| (0..TRAIN_TEMPLATES).map(move |t| (g, t)))
            .map(|(g, t)| domain_sentence(format!("g{g:02}-t{t}"), g, t))
            .collect();
        let other = |rng: &mut ChaCha8Rng, g: usize| (g + rng.random_range(1..groups)) % groups;
        let mut labeled = Vec::new();
        for g in 0..groups {
            for a in 0..TRAIN_TEMPLATES {
                let p = (a + rng.random_range(1..TRAIN_TEMPLATES)) % TRAIN_TEMPLATES;
                let h = other(&mut rng, g);
                labeled.push(Triplet {
                    anchor: text(g, a),
                    positive: Some(text(g, p)),
                    negative: text(h, a),
                });
            }
        }
        let held_out = (0..groups)
            .map(|g| Triplet {
                anchor: text(g, HELD_OUT_QUERY),
                positive: Some(text(g, HELD_OUT_DOC)),
                negative: text(other(&mut rng, g), HELD_OUT_QUERY),
            })
            .collect();
        let n_queries = 20.min(groups);
        let queries = (0..n_queries)
            .map(|g| QueryRecord {
                qid: format!("q{g:02}"),
                text: text(g, HELD_OUT_QUERY),
            })
            .collect();
        // Relevant documents restate each group in the other held-out
        // template; distractors reuse the query template with foreign nouns.
        let mut documents: Vec<DocumentRecord> = (0..groups)
            .map(|g| DocumentRecord {
                did: format!("d{g:02}"),
                text: text(g, HELD_OUT_DOC),
            })
            .collect();
        documents.extend((n_queries..groups).map(|g| DocumentRecord {
            did: format!("x{g:02}"),
            text: text(g, HELD_OUT_QUERY),
        }));
        let qrels = (0..n_queries)
            .map(|g| QrelRecord {
                qid: format!("q{g:02}"),
                did: format!("d{g:02}"),
                rel: 1,
            })
            .collect();
        Domain {
            groups,
            corpus,
            labeled,
            held_out,
            queries,
            documents,
            qrels,
        }
    }

    /// Vocabulary over every template and noun token of the domain.
    pub fn vocab(&self) -> Vocab {
        let mut surfaces: Vec<String> = (0..TEMPLATES)
            .flat_map(|t| (0..TEMPLATE_WIDTH).map(move |s| template_token(t, s)))
            .collect();
        surfaces.extend((0..self.groups).flat_map(|g| [noun_token(g, 0), noun_token(g, 1)]));
        Vocab::from_surfaces(surfaces)
    }
}

const KANA: &[&str] = &[
    "あ", "い", "う", "え", "お", "か", "き", "く", "け", "こ", "さ", "し", "す", "せ", "そ", "た", "ち", "つ", "て",
    "と", "な", "に", "ぬ", "ね", "の", "ま", "み", "む", "め", "も", "ら", "り", "る", "れ", "ろ", "ア", "イ", "ウ",
    "カ", "キ", "ク", "痛", "熱", "頭", "腹", "薬", "病", "院",
];

fn random_surface(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(1..=3);
    (0..len).map(|_| *KANA.choose(rng).expect("non-empty")).collect()
}

/// Random tagged sentences of 5 to 40 tokens. Noun chunks are maximal runs of
/// nominal tokens, optionally preceded by one adjective modifier.
pub fn tagged_sentences(n: usize, seed: u64) -> Vec<TaggedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tags = [
        Pos::Noun,
        Pos::Noun,
        Pos::Noun,
        Pos::Propn,
        Pos::Num,
        Pos::Verb,
        Pos::Adj,
        Pos::Adp,
        Pos::Adp,
        Pos::Aux,
        Pos::Punct,
        Pos::Adv,
    ];
    (0..n)
        .map(|i| {
            let len = rng.random_range(5..=40);
            let tokens: Vec<TaggedToken> = (0..len)
                .map(|_| TaggedToken::new(random_surface(&mut rng), *tags.choose(&mut rng).expect("non-empty")))
                .collect();
            let mut chunks = Vec::new();
            let mut j = 0;
            while j < len {
                if tokens[j].pos.is_nominal() {
                    let mut start = j;
                    if start > 0 && tokens[start - 1].pos == Pos::Adj && chunks.last().is_none_or(|&(_, e)| e < start) {
                        start -= 1;
                    }
                    while j < len && tokens[j].pos.is_nominal() {
                        j += 1;
                    }
                    chunks.push((start, j));
                } else {
                    j += 1;
                }
            }
            let text = tokens.iter().map(|t| t.surface.as_str()).collect();
            TaggedSentence {
                id: format!("line-{}", i + 1),
                text,
                tokens,
                noun_chunks: chunks,
            }
        })
        .collect()
}

/// Relevant sentence pairs plus an encoder whose noun rows carry ten times
/// the norm of every other row.
pub fn planted_relevance(pairs: usize, seed: u64) -> (Vec<TaggedPair>, EncoderParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nouns: Vec<String> = (0..60).map(|i| format!("名{i:02}")).collect();
    let others: Vec<(String, Pos)> = (0..60)
        .map(|i| {
            let pos = [Pos::Verb, Pos::Adp, Pos::Adj, Pos::Aux, Pos::Adv, Pos::Part][i % 6];
            (format!("語{i:02}"), pos)
        })
        .collect();
    let vocab = Vocab::from_surfaces(nouns.iter().cloned().chain(others.iter().map(|o| o.0.clone())));
    let mut params = init_params(vocab, 16, seed ^ 0x9e37).expect("valid dim");
    for n in &nouns {
        let id = params.vocab.id(n);
        params.row_mut(id).iter_mut().for_each(|x| *x *= 10.0);
    }
    let sentence = |rng: &mut ChaCha8Rng, shared: &[String]| -> Vec<TaggedToken> {
        let mut toks: Vec<TaggedToken> = shared.iter().map(|n| TaggedToken::new(n.clone(), Pos::Noun)).collect();
        let extra = rng.random_range(3..7);
        for _ in 0..extra {
            let (s, p) = others.choose(rng).expect("non-empty");
            toks.push(TaggedToken::new(s.clone(), *p));
        }
        toks.shuffle(rng);
        toks
    };
    let to_sentence = |id: String, tokens: Vec<TaggedToken>| TaggedSentence {
        id,
        text: tokens.iter().map(|t| t.surface.as_str()).collect(),
        tokens,
        noun_chunks: vec![],
    };
    let out = (0..pairs)
        .map(|i| {
            let k = rng.random_range(1..=2);
            let shared: Vec<String> = nouns.choose_multiple(&mut rng, k).cloned().collect();
            let a = sentence(&mut rng, &shared);
            let b = sentence(&mut rng, &shared);
            TaggedPair {
                id: format!("pair-{i}"),
                a: to_sentence(format!("pair-{i}-a"), a),
                b: to_sentence(format!("pair-{i}-b"), b),
                score: Some(rng.random_range(4.0..=5.0)),
            }
        })
        .collect();
    (out, params)
}
