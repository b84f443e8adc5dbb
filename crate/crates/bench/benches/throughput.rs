use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use gazeworld::metrics::score_pair;
use gazeworld::numcore::{ema_schedule, OptimizerState};
use gazeworld::probes::extract_probe_features;
use gazeworld::train::pretrain_step;
use gazeworld_bench::{desk_fixture, path_pair};

fn pretraining(c: &mut Criterion) {
    let (model, data, samples) = desk_fixture(16);
    let batch: Vec<_> = samples.iter().collect();
    let tau = ema_schedule(0, 200).unwrap();
    c.bench_function("pretrain_step/batch16", |b| {
        b.iter_batched(
            || {
                let m = model.clone();
                let opt = OptimizerState::new(&m.online, 1e-3, 0.04);
                (m, opt)
            },
            |(mut m, mut opt)| pretrain_step(&mut m, &mut opt, black_box(&batch), tau).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("encode/image", |b| {
        b.iter(|| model.encode(black_box(&data.images[0])).unwrap())
    });
    c.bench_function("probe_features/image", |b| {
        b.iter(|| extract_probe_features(&model, black_box(&data.images[0])).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let (a, b) = path_pair();
    c.bench_function("score_pair/len7", |bench| {
        bench.iter(|| score_pair(black_box(&a), black_box(&b)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = pretraining, metrics
}
criterion_main!(benches);
