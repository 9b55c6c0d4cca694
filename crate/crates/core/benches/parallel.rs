//! Sequential versus chunked-parallel evaluation of the gradient and the
//! curvature product. Without the `parallel` feature both paths run on one
//! thread, which measures the chunking overhead alone.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hfseq::models::{Batch, CurvatureContext, EvalOptions, Model};
use hfseq::{init_params, Architecture, InitScheme, ModelConfig, Rng};

fn setup() -> (Model, Vec<f64>, Batch) {
    let config = ModelConfig::text(Architecture::Mlstm, 40, 48);
    let model = Model::new(&config).unwrap();
    let mut rng = Rng::new(0, 0);
    let theta = init_params(&config, InitScheme::Dense { std: 0.1 }, &mut rng)
        .unwrap()
        .theta;
    let (t, n) = (50, 64);
    let ids: Vec<u32> = (0..(t + 1) * n).map(|_| rng.below(40) as u32).collect();
    let batch = Batch::symbols(t, n, ids[..t * n].to_vec(), ids[n..].to_vec()).unwrap();
    (model, theta, batch)
}

fn worker_counts() -> Vec<usize> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut counts = vec![1, cores.max(2)];
    counts.dedup();
    counts
}

fn gradient(c: &mut Criterion) {
    let (model, theta, batch) = setup();
    let mut group = c.benchmark_group("gradient");
    group.sample_size(10);
    for workers in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| {
                model
                    .gradient(black_box(&theta), &batch, EvalOptions::default().with_workers(w))
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn gv_product(c: &mut Criterion) {
    let (model, theta, batch) = setup();
    let v: Vec<f64> = {
        let mut rng = Rng::new(1, 0);
        (0..theta.len()).map(|_| rng.normal()).collect()
    };
    let mut group = c.benchmark_group("gv_product");
    group.sample_size(10);
    for workers in worker_counts() {
        let ctx = CurvatureContext::new(&model, &theta, &batch, 0.1, 0.0, workers).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, _| {
            b.iter(|| ctx.gv_product(black_box(&v)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gradient, gv_product);
criterion_main!(benches);
