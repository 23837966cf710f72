use balfmm::direct::{p2p_symmetric, SourceColumns};
use balfmm::engine::{run_serial, FmmConfig};
use balfmm::harmonics::{m2l, M2lForm};
use balfmm_bench::{m2l_fixture, uniform};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn m2l_forms(c: &mut Criterion) {
    let mut g = c.benchmark_group("m2l");
    for q in [4, 10, 20] {
        let (mult, target) = m2l_fixture(q);
        for (name, form) in [("rotation", M2lForm::Rotation), ("direct", M2lForm::Direct)] {
            g.bench_with_input(BenchmarkId::new(name, q), &q, |b, _| {
                b.iter(|| m2l(black_box(&mult), target, 0.8, form).unwrap())
            });
        }
    }
    g.finish();
}

fn p2p(c: &mut Criterion) {
    let cols = SourceColumns::new(&uniform(512, 2));
    let mut phi = vec![0.0; 512];
    c.bench_function("p2p/256x256", |b| b.iter(|| p2p_symmetric(&cols, 0..256, 256..512, black_box(&mut phi)).unwrap()));
    c.bench_function("p2p/self-512", |b| b.iter(|| p2p_symmetric(&cols, 0..512, 0..512, black_box(&mut phi)).unwrap()));
}

fn serial_run(c: &mut Criterion) {
    let pts = uniform(20_000, 3);
    let config = FmmConfig { levels: 3, ..FmmConfig::default() };
    let mut g = c.benchmark_group("serial");
    g.sample_size(10);
    g.bench_function("uniform-20k-L3", |b| b.iter(|| run_serial(black_box(&pts), None, &config).unwrap()));
    g.finish();
}

criterion_group!(benches, m2l_forms, p2p, serial_run);
criterion_main!(benches);
