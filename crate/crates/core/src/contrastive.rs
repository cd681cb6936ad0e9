//! Contrastive objectives over a batch of sentence embeddings.
//!
//! For anchors `v_i`, positives `v_i⁺` and optional hard negatives `v_i⁻`, the
//! weighted objective for example `i` is
//!
//! ```text
//! ℓ_i = −log  exp(sim(v_i, v_i⁺)/τ)
//!            ─────────────────────────────────────────────────────────
//!            Σ_j exp(sim(v_i, v_j⁺)/τ) + α^[i=j] · exp(sim(v_i, v_j⁻)/τ)
//! ```
//!
//! with `α⁰ = 1`, so α only scales the example's own hard negative. The batch
//! loss is the mean of `ℓ_i`. Everything is evaluated in log space.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContrastiveError {
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("inconsistent batch shape: {0}")]
    Shape(String),
    #[error("this objective requires hard negatives")]
    MissingNegatives,
    #[error("this objective does not take hard negatives")]
    UnexpectedNegatives,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Hyperparameters of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dropout: f64,
}

impl TrainConfig {
    /// Stage one: synthesized in-domain triplets, own hard negative dropped.
    pub fn stage_one() -> Self {
        TrainConfig {
            tau: 0.05,
            alpha: 0.0,
            batch_size: 64,
            learning_rate: 0.05,
            epochs: 5,
            seed: 42,
            dropout: crate::encoder::DEFAULT_DROPOUT,
        }
    }

    /// Stage two: labeled NLI triplets, hard negative at full weight.
    pub fn stage_two() -> Self {
        TrainConfig {
            alpha: 1.0,
            ..Self::stage_one()
        }
    }

    pub fn validate(&self) -> Result<(), ContrastiveError> {
        let bad = |m: &str| Err(ContrastiveError::Config(m.to_string()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be a positive finite number");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::stage_one()
    }
}

/// Row-aligned anchor / positive / negative embeddings of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Option<Vec<Vec<f64>>>,
}

impl BatchEmbeddings {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn validate(&self) -> Result<(), ContrastiveError> {
        let n = self.anchors.len();
        if n == 0 {
            return Err(ContrastiveError::EmptyBatch);
        }
        let d = self.anchors[0].len();
        let mut groups = vec![("positives", &self.positives)];
        if let Some(neg) = &self.negatives {
            groups.push(("negatives", neg));
        }
        for (name, m) in groups {
            if m.len() != n {
                return Err(ContrastiveError::Shape(format!(
                    "{name} has {} rows, anchors {n}",
                    m.len()
                )));
            }
        }
        let all_rows = self
            .anchors
            .iter()
            .chain(&self.positives)
            .chain(self.negatives.iter().flatten());
        for row in all_rows {
            if row.len() != d {
                return Err(ContrastiveError::Shape(format!(
                    "row of width {} in a batch of width {d}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(ContrastiveError::Shape("non-finite entry".into()));
            }
        }
        Ok(())
    }
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine similarity `uᵀv / (‖u‖‖v‖)`, clamped to [−1, 1].
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, ContrastiveError> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(ContrastiveError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Cosine matrix `sim(a_i, b_j)` for all i, j.
fn cos_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ContrastiveError> {
    a.iter()
        .map(|ai| b.iter().map(|bj| cosine_sim(ai, bj)).collect())
        .collect()
}

/// Per-example logits of the denominator: positives first, then negatives
/// with their log weights. Entries with zero weight are omitted.
struct Logits {
    positive: Vec<Vec<f64>>,
    /// `None` marks a zero-weighted negative.
    negative: Vec<Vec<Option<f64>>>,
}

fn logits(batch: &BatchEmbeddings, tau: f64, alpha: Option<f64>) -> Result<Logits, ContrastiveError> {
    let positive = cos_matrix(&batch.anchors, &batch.positives)?
        .into_iter()
        .map(|row| row.into_iter().map(|c| c / tau).collect())
        .collect();
    let negative = match (&batch.negatives, alpha) {
        (Some(neg), Some(alpha)) => cos_matrix(&batch.anchors, neg)?
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(j, c)| {
                        let w = if i == j { alpha } else { 1.0 };
                        (w > 0.0).then(|| c / tau + w.ln())
                    })
                    .collect()
            })
            .collect(),
        _ => vec![Vec::new(); batch.len()],
    };
    Ok(Logits { positive, negative })
}

fn mean_loss(l: &Logits) -> f64 {
    let n = l.positive.len();
    let total: f64 = (0..n)
        .map(|i| {
            let terms: Vec<f64> = l.positive[i]
                .iter()
                .copied()
                .chain(l.negative[i].iter().flatten().copied())
                .collect();
            logsumexp(&terms) - l.positive[i][i]
        })
        .sum();
    total / n as f64
}

/// In-batch objective: other examples' positives act as negatives.
pub fn loss_inbatch(batch: &BatchEmbeddings, tau: f64) -> Result<f64, ContrastiveError> {
    batch.validate()?;
    if batch.negatives.is_some() {
        return Err(ContrastiveError::UnexpectedNegatives);
    }
    Ok(mean_loss(&logits(batch, tau, None)?))
}

/// Objective with additional negatives, every negative at weight one.
/// Evaluated over shifted exponentials, independently of [`loss_weighted`].
pub fn loss_additional_negatives(batch: &BatchEmbeddings, tau: f64) -> Result<f64, ContrastiveError> {
    batch.validate()?;
    let neg = batch.negatives.as_ref().ok_or(ContrastiveError::MissingNegatives)?;
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let pos: Vec<f64> = batch
            .positives
            .iter()
            .map(|p| cosine_sim(&batch.anchors[i], p).map(|c| c / tau))
            .collect::<Result<_, _>>()?;
        let negs: Vec<f64> = neg
            .iter()
            .map(|v| cosine_sim(&batch.anchors[i], v).map(|c| c / tau))
            .collect::<Result<_, _>>()?;
        let shift = pos.iter().chain(&negs).copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).map(|j| (pos[j] - shift).exp() + (negs[j] - shift).exp()).sum();
        total += -((pos[i] - shift) - denom.ln());
    }
    Ok(total / n as f64)
}

/// Weighted hard-negative objective (mean over the batch).
pub fn loss_weighted(batch: &BatchEmbeddings, tau: f64, alpha: f64) -> Result<f64, ContrastiveError> {
    batch.validate()?;
    if batch.negatives.is_none() {
        return Err(ContrastiveError::MissingNegatives);
    }
    Ok(mean_loss(&logits(batch, tau, Some(alpha))?))
}

/// Loss value and its gradient with respect to every embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

/// Accumulate `coef · ∂sim(a, b)` into `ga` and `gb`.
fn add_cos_grad(a: &[f64], b: &[f64], coef: f64, ga: &mut [f64], gb: &mut [f64]) {
    if coef == 0.0 {
        return;
    }
    let (na, nb) = (norm(a), norm(b));
    let c = dot(a, b) / (na * nb);
    for k in 0..a.len() {
        let (ua, ub) = (a[k] / na, b[k] / nb);
        ga[k] += coef * (ub - c * ua) / na;
        gb[k] += coef * (ua - c * ub) / nb;
    }
}

/// Analytic gradient of [`loss_weighted`].
pub fn loss_weighted_grad(batch: &BatchEmbeddings, tau: f64, alpha: f64) -> Result<LossGrad, ContrastiveError> {
    batch.validate()?;
    let neg = batch.negatives.as_ref().ok_or(ContrastiveError::MissingNegatives)?;
    let l = logits(batch, tau, Some(alpha))?;
    let n = batch.len();
    let d = batch.anchors[0].len();
    let mut ga = vec![vec![0.0; d]; n];
    let mut gp = vec![vec![0.0; d]; n];
    let mut gn = vec![vec![0.0; d]; n];
    let scale = 1.0 / (tau * n as f64);
    let mut total = 0.0;
    for i in 0..n {
        let terms: Vec<f64> = l.positive[i]
            .iter()
            .copied()
            .chain(l.negative[i].iter().flatten().copied())
            .collect();
        let lse = logsumexp(&terms);
        total += lse - l.positive[i][i];
        for j in 0..n {
            let p = (l.positive[i][j] - lse).exp() - if i == j { 1.0 } else { 0.0 };
            let (left, right) = (&mut ga[i], &mut gp[j]);
            add_cos_grad(&batch.anchors[i], &batch.positives[j], p * scale, left, right);
            if let Some(logit) = l.negative[i][j] {
                let q = (logit - lse).exp();
                add_cos_grad(&batch.anchors[i], &neg[j], q * scale, &mut ga[i], &mut gn[j]);
            }
        }
    }
    Ok(LossGrad {
        loss: total / n as f64,
        anchors: ga,
        positives: gp,
        negatives: gn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, with_neg: bool) -> BatchEmbeddings {
        let m = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let anchors = m(rng);
        let positives = m(rng);
        let negatives = with_neg.then(|| m(rng));
        BatchEmbeddings {
            anchors,
            positives,
            negatives,
        }
    }

    /// Unit vector in the plane at the angle whose cosine with (1, 0) is `c`.
    fn at_cos(c: f64) -> Vec<f64> {
        vec![c, (1.0 - c * c).sqrt()]
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]), Err(ContrastiveError::ZeroVector));
    }

    #[test]
    fn inbatch_single_example_is_zero() {
        let b = BatchEmbeddings {
            anchors: vec![vec![1.0, 2.0]],
            positives: vec![vec![-1.0, 0.5]],
            negatives: None,
        };
        assert_eq!(loss_inbatch(&b, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn inbatch_equal_sims_is_log_two() {
        let b = BatchEmbeddings {
            anchors: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            positives: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            negatives: None,
        };
        assert!((loss_inbatch(&b, 0.05).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn inbatch_two_by_two_scalar_oracle() {
        // Positives on the axes, anchors placed so the cosine table is
        // s11 = 0.9, s12 = 0.1, s21 = 0.2, s22 = 0.8.
        let tau = 0.05;
        let b = BatchEmbeddings {
            anchors: vec![
                vec![0.9, 0.1, (1.0f64 - 0.82).sqrt()],
                vec![0.2, 0.8, (1.0f64 - 0.68).sqrt()],
            ],
            positives: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            negatives: None,
        };
        let s = [[0.9f64, 0.1], [0.2, 0.8]];
        let row = |i: usize| {
            let num = (s[i][i] / tau).exp();
            let den = (s[i][0] / tau).exp() + (s[i][1] / tau).exp();
            -(num / den).ln()
        };
        let oracle = (row(0) + row(1)) / 2.0;
        assert!((oracle - 3.128364e-06).abs() < 1e-12);
        let got = loss_inbatch(&b, tau).unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn weighted_single_example_cases() {
        let single = BatchEmbeddings {
            anchors: vec![vec![1.0, 0.0]],
            positives: vec![at_cos(0.3)],
            negatives: Some(vec![at_cos(0.3)]),
        };
        assert_eq!(loss_weighted(&single, 0.05, 0.0).unwrap(), 0.0);
        assert!((loss_weighted(&single, 0.05, 1.0).unwrap() - 2f64.ln()).abs() < 1e-12);
        let g = loss_weighted_grad(&single, 0.05, 0.0).unwrap();
        assert!(g
            .anchors
            .iter()
            .chain(&g.positives)
            .chain(&g.negatives)
            .flatten()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn weighted_alpha_zero_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = random_batch(&mut rng, 2, 5, true);
        let tau = 0.05;
        let neg = b.negatives.as_ref().unwrap();
        let s = |x: &[f64], y: &[f64]| {
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
            dot / (nx * ny)
        };
        let mut total = 0.0;
        for i in 0..2 {
            let other = 1 - i;
            let num = (s(&b.anchors[i], &b.positives[i]) / tau).exp();
            let den =
                num + (s(&b.anchors[i], &b.positives[other]) / tau).exp() + (s(&b.anchors[i], &neg[other]) / tau).exp();
            total += -(num / den).ln();
        }
        let got = loss_weighted(&b, tau, 0.0).unwrap();
        assert!((got - total / 2.0).abs() < 1e-9);
    }

    #[test]
    fn shape_errors() {
        let b = BatchEmbeddings {
            anchors: vec![vec![1.0, 0.0]],
            positives: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            negatives: None,
        };
        assert!(matches!(loss_inbatch(&b, 0.05), Err(ContrastiveError::Shape(_))));
        let b = BatchEmbeddings {
            anchors: vec![vec![1.0, 0.0]],
            positives: vec![vec![1.0, 0.0]],
            negatives: None,
        };
        assert_eq!(loss_weighted(&b, 0.05, 1.0), Err(ContrastiveError::MissingNegatives));
        let z = BatchEmbeddings {
            anchors: vec![vec![0.0, 0.0]],
            positives: vec![vec![1.0, 0.0]],
            negatives: None,
        };
        assert_eq!(loss_inbatch(&z, 0.05), Err(ContrastiveError::ZeroVector));
    }

    #[test]
    fn radial_direction_has_zero_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_batch(&mut rng, 3, 4, true);
        let g = loss_weighted_grad(&b, 0.05, 0.5).unwrap();
        let neg = b.negatives.as_ref().unwrap();
        let radial: f64 = b
            .anchors
            .iter()
            .zip(&g.anchors)
            .chain(b.positives.iter().zip(&g.positives))
            .chain(neg.iter().zip(&g.negatives))
            .map(|(x, gx)| dot(x, gx))
            .sum();
        assert!(radial.abs() < 1e-9, "radial derivative {radial}");
    }

    proptest! {
        #[test]
        fn weighted_loss_is_non_negative(seed in 0u64..10_000, n in 1usize..5, alpha in 0.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_batch(&mut rng, n, 4, true);
            prop_assert!(loss_weighted(&b, 0.05, alpha).unwrap() >= 0.0);
        }

        #[test]
        fn alpha_one_matches_additional_negatives(seed in 0u64..10_000, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_batch(&mut rng, n, 6, true);
            let w = loss_weighted(&b, 0.05, 1.0).unwrap();
            let r = loss_additional_negatives(&b, 0.05).unwrap();
            prop_assert!((w - r).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }
}
