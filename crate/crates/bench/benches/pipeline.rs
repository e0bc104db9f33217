use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nnveil_core::interpreter::random_inputs;
use nnveil_core::{
    build_fixture, obfuscate, parse_model, propagation_kernel, serialize_model, to_labeled_graph, FixtureId,
    ObfuscationConfig, PKConfig, Session, ShapeStrategy,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn inference(c: &mut Criterion) {
    let mut group = c.benchmark_group("inference");
    for id in FixtureId::ALL {
        let g = build_fixture(id, 1);
        let x = random_inputs(&g, &mut ChaCha8Rng::seed_from_u64(0));
        let plain = Session::new(&g, None).unwrap();
        group.bench_with_input(BenchmarkId::new("original", id), &x, |b, x| {
            b.iter(|| plain.infer(black_box(x.clone())).unwrap())
        });
        for (n1, n2) in [(0, 0), (20, 20), (30, 0)] {
            let ob = obfuscate(&g, &ObfuscationConfig::all(1, n1, n2, ShapeStrategy::AlignToLargest)).unwrap();
            let s = Session::new(&ob.model, Some(&ob.bundle)).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("obfuscated({n1},{n2})"), id), &x, |b, x| {
                b.iter(|| s.infer(black_box(x.clone())).unwrap())
            });
        }
    }
    group.finish();
}

fn obfuscation(c: &mut Criterion) {
    let g = build_fixture(FixtureId::Lenet, 1);
    let cfg = ObfuscationConfig::all(1, 20, 20, ShapeStrategy::AlignToLargest);
    c.bench_function("obfuscate lenet (20,20)", |b| b.iter(|| obfuscate(black_box(&g), &cfg).unwrap()));
    let bytes = serialize_model(&obfuscate(&g, &cfg).unwrap().model).unwrap();
    c.bench_function("parse obfuscated lenet", |b| b.iter(|| parse_model(black_box(&bytes)).unwrap()));
}

fn similarity(c: &mut Criterion) {
    let g = build_fixture(FixtureId::PoolNet, 1);
    let ob = obfuscate(&g, &ObfuscationConfig::all(1, 30, 30, ShapeStrategy::AlignToLargest)).unwrap();
    let (a, b) = (to_labeled_graph(&g), to_labeled_graph(&ob.model));
    let cfg = PKConfig::default();
    c.bench_function("propagation kernel pool_net vs (30,30)", |bench| {
        bench.iter(|| propagation_kernel(black_box(&a), black_box(&b), &cfg).unwrap())
    });
}

criterion_group!(benches, inference, obfuscation, similarity);
criterion_main!(benches);
