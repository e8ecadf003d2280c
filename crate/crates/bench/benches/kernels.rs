use std::hint::black_box;

use compactformer::blocks::decompose;
use compactformer::koopman::{Koopformer, KoopformerConfig};
use compactformer::linalg::householder_qr;
use compactformer::models::{Family, Forecaster, ModelConfig, Variant};
use compactformer::probsparse::{
    full_attention, probsparse_attention, select_top_u, sparsity_score, LazyMode, ProbSparseConfig,
};
use compactformer::rng::{prng, uniform};
use compactformer::signals::{generate, SignalId};
use compactformer::{Tape, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = prng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect())
}

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    for l in [32, 64, 128, 256] {
        let (q, k, v) = (rand_t(&[l, 8], 1), rand_t(&[l, 8], 2), rand_t(&[l, 8], 3));
        group.bench_with_input(BenchmarkId::new("full", l), &l, |b, _| {
            b.iter(|| full_attention(black_box(&q), &k, &v).unwrap())
        });
        let u = ProbSparseConfig::default().active_count(l, l);
        group.bench_with_input(BenchmarkId::new("probsparse_topk", l), &l, |b, _| {
            b.iter(|| {
                let sel = select_top_u(&sparsity_score(black_box(&q), &k).unwrap(), u).unwrap();
                probsparse_attention(&q, &k, &v, &sel, LazyMode::TopK).unwrap()
            })
        });
    }
    group.finish();
}

fn decomposition(c: &mut Criterion) {
    let x = generate(SignalId::CosineTrend, 500).unwrap().values;
    c.bench_function("decompose_k25_len500", |b| b.iter(|| decompose(black_box(&x), 25).unwrap()));
}

fn qr(c: &mut Criterion) {
    let mut group = c.benchmark_group("householder_qr");
    for n in [4, 16, 64] {
        let a = rand_t(&[n, n], 4);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| householder_qr(black_box(&a)).unwrap()));
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step_batch32_p20_h8");
    let x = rand_t(&[32, 20], 5);
    let y = rand_t(&[32, 8], 6);
    for family in Family::ALL {
        let model = Forecaster::build(ModelConfig::new(family, Variant::Standard, 20, 8), 7).unwrap();
        group.bench_function(family.name(), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let p = model.bind(&mut tape);
                let l = model.loss(&mut tape, &p, black_box(&x), &y).unwrap();
                tape.backward(l).unwrap()
            })
        });
    }
    group.finish();
}

fn koopformer_step(c: &mut Criterion) {
    let cfg = KoopformerConfig { d_state: 2, patch: 16, horizon: 5, ..KoopformerConfig::default() };
    let model = Koopformer::build(cfg, 8).unwrap();
    let x = rand_t(&[64, 16, 2], 9);
    let y = rand_t(&[64, 5, 2], 10);
    c.bench_function("koopformer_step_vdp_batch64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape);
            let l = model.loss(&mut tape, &p, black_box(&x), &y).unwrap();
            tape.backward(l.total).unwrap()
        })
    });
}

criterion_group!(benches, attention, decomposition, qr, training_step, koopformer_step);
criterion_main!(benches);
