use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hcms_bench::Fixture;
use hcms_core::gating::GumbelRng;
use hcms_core::model::ForwardOptions;
use hcms_core::train_eval::{budget_sweep, evaluate, train, BudgetPolicy, EvalOptions, TrainConfig};
use hcms_core::{CostModel, Network};

fn forward(c: &mut Criterion) {
    let f = Fixture::new(1).unwrap();
    let video = &f.data.videos[0];
    let mut g = c.benchmark_group("forward_video");
    g.bench_function("eval", |b| {
        b.iter(|| {
            f.network
                .forward(black_box(video), &ForwardOptions::eval(), &mut GumbelRng::seeded(0))
        })
    });
    g.bench_function("train_dense", |b| {
        b.iter(|| {
            f.network
                .forward(black_box(video), &ForwardOptions::train(1.0), &mut GumbelRng::seeded(0))
        })
    });
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let f = Fixture::new(1).unwrap();
    let video = &f.data.videos[0];
    let wide: Network<f64> = f.network.cast();
    let opts = ForwardOptions::train(1.0);
    let mut g = c.benchmark_group("loss_and_grads");
    g.bench_function("f32", |b| {
        b.iter(|| {
            f.network
                .loss_and_grads(black_box(video), &opts, &mut GumbelRng::seeded(0), &f.config.loss)
        })
    });
    g.bench_function("f64", |b| {
        b.iter(|| wide.loss_and_grads(black_box(video), &opts, &mut GumbelRng::seeded(0), &f.config.loss))
    });
    g.finish();
}

fn epoch(c: &mut Criterion) {
    let f = Fixture::new(2).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..f.config.clone()
    };
    let cost = CostModel::default();
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("one_epoch_24_videos", |b| b.iter(|| train(&cfg, &f.data, None, &cost)));
    g.finish();
}

fn inference(c: &mut Criterion) {
    let f = Fixture::new(2).unwrap();
    let cost = CostModel::default();
    let budgets = [1.12, 10.0, 30.0, 70.0, 140.0, 280.0, 560.0, 1068.16];
    let mut g = c.benchmark_group("inference");
    g.sample_size(20);
    g.bench_function("evaluate_24_videos", |b| {
        b.iter(|| evaluate(&f.network, &f.data, &cost, &EvalOptions::default()))
    });
    g.bench_function("budget_sweep_8_levels", |b| {
        b.iter(|| budget_sweep(&f.network, &f.data, &budgets, &cost, BudgetPolicy::ReserveAudio, 1))
    });
    g.finish();
}

criterion_group!(benches, forward, gradients, epoch, inference);
criterion_main!(benches);
