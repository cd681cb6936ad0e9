use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jcse_bench::domain_fixture;
use jcse_core::benchmark::bleu1;
use jcse_core::contrastive::{loss_weighted_grad, BatchEmbeddings, TrainConfig};
use jcse_core::encoder::DropoutSpec;
use jcse_core::metrics::run_two_tower_eval;
use jcse_core::trainer::{batch_loss_grad, tokenize_triplets, RowSeeds, TokenizedTriplet};

fn embed(c: &mut Criterion) {
    let mut group = c.benchmark_group("embed");
    for dim in [32, 128] {
        let (domain, params) = domain_fixture(dim);
        let text = &domain.corpus[0].text;
        let dropout = DropoutSpec::new(0.1, 1).unwrap();
        group.bench_with_input(BenchmarkId::new("eval", dim), &dim, |b, _| {
            b.iter(|| params.embed_text(black_box(text), None).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dropout", dim), &dim, |b, _| {
            b.iter(|| params.embed_text(black_box(text), Some(&dropout)).unwrap())
        });
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_weighted_grad");
    for n in [16, 64] {
        let row =
            |i: usize, j: usize| -> Vec<f64> { (0..64).map(|k| ((i * 31 + j * 7 + k) % 13) as f64 - 6.0).collect() };
        let batch = BatchEmbeddings {
            anchors: (0..n).map(|i| row(i, 0)).collect(),
            positives: (0..n).map(|i| row(i, 1)).collect(),
            negatives: Some((0..n).map(|i| row(i, 2)).collect()),
        };
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| loss_weighted_grad(black_box(&batch), 0.05, 1.0).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let (domain, params) = domain_fixture(32);
    let tokenized = tokenize_triplets(&params.vocab, &domain.labeled).unwrap();
    let rows: Vec<&TokenizedTriplet> = tokenized.iter().take(64).collect();
    let seeds: Vec<RowSeeds> = (0..rows.len()).map(|r| RowSeeds::derive(1, 0, 0, r)).collect();
    let cfg = TrainConfig::stage_two();
    c.bench_function("batch_loss_grad/64", |b| {
        b.iter(|| batch_loss_grad(&params, black_box(&rows), &seeds, &cfg).unwrap())
    });
}

fn retrieval(c: &mut Criterion) {
    let (domain, params) = domain_fixture(32);
    c.bench_function("two_tower_eval/20x80", |b| {
        b.iter(|| {
            run_two_tower_eval(
                &params,
                &params,
                &domain.queries,
                &domain.documents,
                &domain.qrels,
                &[1, 5],
            )
            .unwrap()
        })
    });
}

fn bleu(c: &mut Criterion) {
    let reference = "the quick brown fox jumps over the lazy dog near the river bank";
    let candidate = "a quick brown dog jumps over the lazy fox by the river";
    c.bench_function("bleu1", |b| {
        b.iter(|| bleu1(black_box(candidate), black_box(reference)))
    });
}

criterion_group!(benches, embed, loss, train_step, retrieval, bleu);
criterion_main!(benches);
