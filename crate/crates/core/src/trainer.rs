//! Two-stage contrastive training.
//!
//! Stage one trains on synthesized in-domain triplets whose positive is the
//! anchor under a second dropout mask; stage two trains on labeled NLI
//! triplets. Both run plain mini-batch gradient descent on the weighted
//! hard-negative objective.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::{self, BatchEmbeddings, ContrastiveError, TrainConfig};
use crate::corpus::{NliLabel, NliRecord, Triplet};
use crate::encoder::{DropoutSpec, EncoderError, EncoderParams, ParamGrad, Vocab};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no training triplets")]
    EmptyTriplets,
    #[error("triplet {index}: {field} tokenizes to nothing")]
    EmptyText { index: usize, field: &'static str },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub batches: usize,
    pub checksum: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliReport {
    pub premises: usize,
    pub dropped_premises: usize,
    pub triplets: usize,
}

/// Stage-two triplets: every (entailment, contradiction) hypothesis pair of a
/// premise, in order of first appearance. Premises lacking either label are
/// dropped and counted.
pub fn build_nli_triplets(records: &[NliRecord]) -> (Vec<Triplet>, NliReport) {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, (Vec<&str>, Vec<&str>)> = HashMap::new();
    for r in records {
        let entry = groups.entry(r.premise.as_str()).or_insert_with(|| {
            order.push(r.premise.as_str());
            (Vec::new(), Vec::new())
        });
        match r.label {
            NliLabel::Entailment => entry.0.push(&r.hypothesis),
            NliLabel::Contradiction => entry.1.push(&r.hypothesis),
            NliLabel::Neutral => {}
        }
    }
    let mut report = NliReport {
        premises: order.len(),
        ..Default::default()
    };
    let mut triplets = Vec::new();
    for premise in order {
        let (ent, con) = &groups[premise];
        if ent.is_empty() || con.is_empty() {
            report.dropped_premises += 1;
            continue;
        }
        for e in ent {
            for c in con {
                let t = Triplet {
                    anchor: premise.to_string(),
                    positive: Some(e.to_string()),
                    negative: c.to_string(),
                };
                if t.validate().is_ok() {
                    triplets.push(t);
                }
            }
        }
    }
    report.triplets = triplets.len();
    (triplets, report)
}

/// A triplet segmented against an encoder vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedTriplet {
    pub anchor: Vec<usize>,
    pub positive: Option<Vec<usize>>,
    pub negative: Vec<usize>,
}

impl TokenizedTriplet {
    pub fn positive_ids(&self) -> &[usize] {
        self.positive.as_deref().unwrap_or(&self.anchor)
    }
}

pub fn tokenize_triplets(vocab: &Vocab, triplets: &[Triplet]) -> Result<Vec<TokenizedTriplet>, TrainError> {
    triplets
        .iter()
        .enumerate()
        .map(|(index, t)| {
            let ids = |text: &str, field| {
                let ids = vocab.tokenize(text);
                if ids.is_empty() {
                    Err(TrainError::EmptyText { index, field })
                } else {
                    Ok(ids)
                }
            };
            Ok(TokenizedTriplet {
                anchor: ids(&t.anchor, "anchor")?,
                positive: t.positive.as_deref().map(|p| ids(p, "positive")).transpose()?,
                negative: ids(&t.negative, "negative")?,
            })
        })
        .collect()
}

/// Dropout seeds for the three encodings of one batch row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowSeeds {
    pub anchor: u64,
    pub positive: u64,
    pub negative: u64,
}

impl RowSeeds {
    pub fn derive(seed: u64, epoch: usize, batch: usize, row: usize) -> Self {
        let at = |slot: u64| seed::mix(seed, &[epoch as u64, batch as u64, row as u64, slot]);
        RowSeeds {
            anchor: at(1),
            positive: at(2),
            negative: at(3),
        }
    }
}

struct RowEncoding {
    anchor: Vec<f64>,
    positive: Vec<f64>,
    negative: Vec<f64>,
}

fn specs(seeds: RowSeeds, rate: f64) -> Result<[DropoutSpec; 3], EncoderError> {
    Ok([
        DropoutSpec::new(rate, seeds.anchor)?,
        DropoutSpec::new(rate, seeds.positive)?,
        DropoutSpec::new(rate, seeds.negative)?,
    ])
}

fn encode_rows(
    params: &EncoderParams,
    rows: &[&TokenizedTriplet],
    seeds: &[RowSeeds],
    rate: f64,
) -> Result<Vec<RowEncoding>, EncoderError> {
    rows.par_iter()
        .zip(seeds.par_iter())
        .map(|(t, &s)| {
            let [a, p, n] = specs(s, rate)?;
            Ok(RowEncoding {
                anchor: params.embed_ids(&t.anchor, Some(&a))?.0,
                positive: params.embed_ids(t.positive_ids(), Some(&p))?.0,
                negative: params.embed_ids(&t.negative, Some(&n))?.0,
            })
        })
        .collect()
}

fn batch_embeddings(rows: Vec<RowEncoding>) -> BatchEmbeddings {
    let mut b = BatchEmbeddings {
        anchors: Vec::with_capacity(rows.len()),
        positives: Vec::with_capacity(rows.len()),
        negatives: Some(Vec::with_capacity(rows.len())),
    };
    for r in rows {
        b.anchors.push(r.anchor);
        b.positives.push(r.positive);
        if let Some(n) = b.negatives.as_mut() {
            n.push(r.negative);
        }
    }
    b
}

/// Weighted objective of one batch, evaluated through the encoder.
pub fn batch_loss(
    params: &EncoderParams,
    rows: &[&TokenizedTriplet],
    seeds: &[RowSeeds],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let batch = batch_embeddings(encode_rows(params, rows, seeds, cfg.dropout)?);
    Ok(contrastive::loss_weighted(&batch, cfg.tau, cfg.alpha)?)
}

/// Batch loss and its gradient with respect to every encoder parameter.
/// Row gradients are computed independently and summed in row order.
pub fn batch_loss_grad(
    params: &EncoderParams,
    rows: &[&TokenizedTriplet],
    seeds: &[RowSeeds],
    cfg: &TrainConfig,
) -> Result<(f64, ParamGrad), TrainError> {
    let batch = batch_embeddings(encode_rows(params, rows, seeds, cfg.dropout)?);
    let lg = contrastive::loss_weighted_grad(&batch, cfg.tau, cfg.alpha)?;
    let row_grads: Vec<ParamGrad> = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            let t = rows[i];
            let [a, p, n] = specs(seeds[i], cfg.dropout)?;
            let mut g = params.embed_grad_ids(&t.anchor, Some(&a), &lg.anchors[i])?;
            g.accumulate(&params.embed_grad_ids(t.positive_ids(), Some(&p), &lg.positives[i])?);
            g.accumulate(&params.embed_grad_ids(&t.negative, Some(&n), &lg.negatives[i])?);
            Ok(g)
        })
        .collect::<Result<_, EncoderError>>()?;
    let mut total = ParamGrad::zeros(params.dim);
    for g in &row_grads {
        total.accumulate(g);
    }
    Ok((lg.loss, total))
}

/// One training stage of mini-batch gradient descent.
///
/// Each epoch shuffles with a seeded generator and keeps the final partial
/// batch. Anchors, positives, and negatives use distinct dropout seeds derived
/// from `(epoch, batch, row)`; an absent positive re-encodes the anchor.
pub fn train_stage(
    mut params: EncoderParams,
    triplets: &[Triplet],
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainReport), TrainError> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(TrainError::EmptyTriplets);
    }
    let tokenized = tokenize_triplets(&params.vocab, triplets)?;
    let mut order: Vec<usize> = (0..tokenized.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batches = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(cfg.seed, &[0x5348_5546, epoch as u64]));
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let rows: Vec<&TokenizedTriplet> = chunk.iter().map(|&i| &tokenized[i]).collect();
            let seeds: Vec<RowSeeds> = (0..rows.len())
                .map(|r| RowSeeds::derive(cfg.seed, epoch, b, r))
                .collect();
            let (loss, grad) = batch_loss_grad(&params, &rows, &seeds, cfg)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            params.apply_gradient(&grad, cfg.learning_rate);
            weighted += loss * rows.len() as f64;
            batches += 1;
        }
        epoch_losses.push(weighted / tokenized.len() as f64);
    }
    let checksum = params.checksum();
    Ok((
        params,
        TrainReport {
            epoch_losses,
            batches,
            checksum,
        },
    ))
}

/// Stage one on synthesized triplets, then stage two on labeled triplets,
/// starting from the stage-one parameters.
pub fn two_stage_train(
    params: EncoderParams,
    stage1: &[Triplet],
    stage2: &[Triplet],
    cfg1: &TrainConfig,
    cfg2: &TrainConfig,
) -> Result<(EncoderParams, [TrainReport; 2]), TrainError> {
    if stage2.is_empty() {
        return Err(TrainError::EmptyTriplets);
    }
    let (params, r1) = train_stage(params, stage1, cfg1)?;
    let (params, r2) = train_stage(params, stage2, cfg2)?;
    Ok((params, [r1, r2]))
}

/// Mean of `sim(v, v⁺) − sim(v, v⁻)` without dropout. A missing positive is
/// the anchor itself.
pub fn mean_margin(params: &EncoderParams, triplets: &[Triplet]) -> Result<f64, TrainError> {
    if triplets.is_empty() {
        return Err(TrainError::EmptyTriplets);
    }
    let tokenized = tokenize_triplets(&params.vocab, triplets)?;
    let margins: Vec<f64> = tokenized
        .par_iter()
        .map(|t| {
            let a = params.embed_ids(&t.anchor, None)?;
            let p = params.embed_ids(t.positive_ids(), None)?;
            let n = params.embed_ids(&t.negative, None)?;
            Ok(contrastive::cosine_sim(&a, &p)? - contrastive::cosine_sim(&a, &n)?)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(margins.iter().sum::<f64>() / margins.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    fn nli(p: &str, h: &str, label: NliLabel) -> NliRecord {
        NliRecord {
            premise: p.into(),
            hypothesis: h.into(),
            label,
        }
    }

    fn toy_params() -> EncoderParams {
        let vocab = Vocab::from_surfaces(["a", "b", "c", "d", "e", "f"]);
        init_params(vocab, 6, 4).unwrap()
    }

    fn toy_triplets() -> Vec<Triplet> {
        vec![
            Triplet {
                anchor: "a b".into(),
                positive: None,
                negative: "a c".into(),
            },
            Triplet {
                anchor: "d e".into(),
                positive: Some("e d f".into()),
                negative: "b e".into(),
            },
            Triplet {
                anchor: "c f".into(),
                positive: None,
                negative: "d f".into(),
            },
        ]
    }

    #[test]
    fn nli_direct_rule_and_drops() {
        let recs = vec![
            nli("p", "h1", NliLabel::Entailment),
            nli("p", "h2", NliLabel::Contradiction),
            nli("q", "h3", NliLabel::Entailment),
            nli("r", "h4", NliLabel::Neutral),
        ];
        let (t, report) = build_nli_triplets(&recs);
        assert_eq!(
            t,
            vec![Triplet {
                anchor: "p".into(),
                positive: Some("h1".into()),
                negative: "h2".into()
            }]
        );
        assert_eq!(report.premises, 3);
        assert_eq!(report.dropped_premises, 2);
    }

    #[test]
    fn nli_cross_product() {
        let recs = vec![
            nli("p", "e1", NliLabel::Entailment),
            nli("p", "c", NliLabel::Contradiction),
            nli("p", "e2", NliLabel::Entailment),
        ];
        let (t, _) = build_nli_triplets(&recs);
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|x| x.negative == "c"));
        assert_eq!(t[1].positive.as_deref(), Some("e2"));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let p = toy_params();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::stage_two()
        };
        let (q, report) = train_stage(p.clone(), &toy_triplets(), &cfg).unwrap();
        assert_eq!(p, q);
        assert_eq!(report.epoch_losses.len(), 3);
        assert_eq!(report.batches, 6);
    }

    #[test]
    fn single_triplet_alpha_zero_is_stationary() {
        let p = toy_params();
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 2,
            ..TrainConfig::stage_one()
        };
        let (q, report) = train_stage(p.clone(), &toy_triplets()[..1], &cfg).unwrap();
        assert_eq!(report.epoch_losses, vec![0.0, 0.0]);
        assert_eq!(p, q);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            batch_size: 2,
            epochs: 2,
            ..TrainConfig::stage_two()
        };
        let (a, ra) = train_stage(toy_params(), &toy_triplets(), &cfg).unwrap();
        let (b, rb) = train_stage(toy_params(), &toy_triplets(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn errors() {
        let cfg = TrainConfig::stage_one();
        assert!(matches!(
            train_stage(toy_params(), &[], &cfg),
            Err(TrainError::EmptyTriplets)
        ));
        let bad = vec![Triplet {
            anchor: "a".into(),
            positive: Some("   ".into()),
            negative: "b".into(),
        }];
        assert!(matches!(
            train_stage(toy_params(), &bad, &cfg),
            Err(TrainError::EmptyText {
                index: 0,
                field: "positive"
            })
        ));
    }

    #[test]
    fn stage_defaults() {
        let (one, two) = (TrainConfig::stage_one(), TrainConfig::stage_two());
        assert_eq!((one.tau, one.alpha), (0.05, 0.0));
        assert_eq!((two.tau, two.alpha), (0.05, 1.0));
    }

    #[test]
    fn zero_epoch_first_stage_equals_stage_two_alone() {
        let cfg1 = TrainConfig {
            epochs: 0,
            ..TrainConfig::stage_one()
        };
        let cfg2 = TrainConfig {
            batch_size: 2,
            epochs: 2,
            ..TrainConfig::stage_two()
        };
        let (a, _) = two_stage_train(toy_params(), &toy_triplets(), &toy_triplets(), &cfg1, &cfg2).unwrap();
        let (b, _) = train_stage(toy_params(), &toy_triplets(), &cfg2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stage_order_matters() {
        let s1 = toy_triplets();
        let s2: Vec<Triplet> = toy_triplets()
            .into_iter()
            .map(|t| Triplet {
                positive: Some(t.negative.clone()),
                negative: t.anchor.clone() + " f",
                ..t
            })
            .collect();
        let c1 = TrainConfig {
            batch_size: 2,
            epochs: 2,
            ..TrainConfig::stage_one()
        };
        let c2 = TrainConfig {
            batch_size: 2,
            epochs: 2,
            ..TrainConfig::stage_two()
        };
        let (_, fwd) = two_stage_train(toy_params(), &s1, &s2, &c1, &c2).unwrap();
        let (_, rev) = two_stage_train(toy_params(), &s2, &s1, &c1, &c2).unwrap();
        assert_ne!(fwd[1].checksum, rev[1].checksum);
    }
}
