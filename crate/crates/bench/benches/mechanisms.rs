use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use emdp::frequency::{freq_est_local, gkrr_mechanism, gkrr_right_inverse, GkrrParams};
use emdp::rng;
use emdp::shuffle::{calibrate_alpha0, effective_budget, CalibrationMode};
use emdp::{
    build_clustered, build_embedding, bvn_matching, emd_cost, EmbeddingTable, Histogram, MetricBudget, Model, Multiset,
};
use rand::Rng;

fn embedding_space(k: usize) -> Arc<emdp::MetricSpace> {
    let mut r = rng::stream(k as u64);
    let pts = (0..k).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
    Arc::new(build_embedding(&EmbeddingTable::new(pts).unwrap()).unwrap())
}

fn random_hist(space: &Arc<emdp::MetricSpace>, seed: u64) -> Histogram {
    let mut r = rng::stream(seed);
    let w: Vec<f64> = (0..space.len()).map(|_| r.random::<f64>() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    Histogram::new(space.clone(), w.into_iter().map(|x| x / total).collect()).unwrap()
}

fn emd(c: &mut Criterion) {
    let mut group = c.benchmark_group("emd");
    for k in [16, 64, 256] {
        let space = embedding_space(k);
        let (p, q) = (random_hist(&space, 1), random_hist(&space, 2));
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| emd_cost(black_box(&p), &q))
        });
    }
    group.finish();
}

fn hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("bvn_matching");
    let space = embedding_space(32);
    for m in [16usize, 64, 256] {
        let mut r = rng::stream(m as u64);
        let a: Vec<usize> = (0..m).map(|_| r.random_range(0..32)).collect();
        let b: Vec<usize> = (0..m).map(|_| r.random_range(0..32)).collect();
        let (a, b) = (
            Multiset::from_items(space.clone(), &a).unwrap(),
            Multiset::from_items(space.clone(), &b).unwrap(),
        );
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |bn, _| {
            bn.iter(|| bvn_matching(black_box(&a), &b))
        });
    }
    group.finish();
}

fn gkrr(c: &mut Criterion) {
    let cs = "clustered:4,4,0.2".parse::<emdp::ClusteredSpace>().unwrap();
    let space = Arc::new(build_clustered(4, 4, 0.2).unwrap());
    let a = gkrr_mechanism(cs, 1.5).unwrap();
    let b = gkrr_right_inverse(&GkrrParams::new(cs, 1.5).unwrap()).unwrap();
    let mut r = rng::stream(5);
    let users: Vec<Multiset> = (0..1000)
        .map(|_| {
            let items: Vec<usize> = (0..50).map(|_| r.random_range(0..16)).collect();
            Multiset::from_items(space.clone(), &items).unwrap()
        })
        .collect();
    c.bench_function("gkrr_freq_est_n1000_m50", |bn| {
        bn.iter(|| freq_est_local(black_box(&users), &a, &b, 7))
    });
}

fn calibration(c: &mut Criterion) {
    let target = MetricBudget::new(25.0, 1e-12).unwrap();
    let model = Model::Central { n: 100_000 };
    c.bench_function("effective_budget", |b| {
        b.iter(|| effective_budget(black_box(2.7), 1e-12, 1000, model))
    });
    c.bench_function("calibrate_exact", |b| {
        b.iter(|| calibrate_alpha0(black_box(&target), 1000, model, CalibrationMode::Exact))
    });
}

criterion_group!(benches, emd, hungarian, gkrr, calibration);
criterion_main!(benches);
