use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use quadwit::backprojection::{analytic_mc, finite_cut_plan, mc_estimate};
use quadwit::elementary::{evaluate_test, optimize_radial};
use quadwit::sampler::sample_joint;
use quadwit::{CutDistribution, StateModel};
use quadwit_bench::{joint_stream, optimal_spec, per_cut_dataset, reference_kernel, SEED};

fn radial_optimization(c: &mut Criterion) {
    let model = StateModel::single_photon();
    let mut group = c.benchmark_group("optimize_radial");
    group.sample_size(10);
    for n in [4usize, 8, 16] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| optimize_radial(&model, black_box(n), n + 1, 1_000_000).unwrap())
        });
    }
    group.finish();
}

fn elementary_evaluation(c: &mut Criterion) {
    let spec = optimal_spec(8, 900_000);
    let dataset = per_cut_dataset(9, 20_000);
    c.bench_function("evaluate_test/N8_180k", |b| {
        b.iter(|| evaluate_test(black_box(&dataset), &spec).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let model = StateModel::single_photon();
    let mut group = c.benchmark_group("sample_joint");
    group.sample_size(20);
    for distribution in [CutDistribution::Uniform, CutDistribution::Optimal { lambda: 1.0 }] {
        let label = match distribution {
            CutDistribution::Uniform => "uniform",
            _ => "optimal",
        };
        group.bench_function(label, |b| {
            b.iter(|| sample_joint(&model, distribution, black_box(100_000), SEED).unwrap())
        });
    }
    group.finish();
}

fn backprojection(c: &mut Criterion) {
    let model = StateModel::single_photon();
    let kernel = reference_kernel();
    let stream = joint_stream(100_000);
    c.bench_function("mc_estimate/100k", |b| {
        b.iter(|| mc_estimate(black_box(&stream), &kernel, CutDistribution::Uniform).unwrap())
    });
    c.bench_function("analytic_mc", |b| {
        b.iter(|| analytic_mc(&model, black_box(&kernel), CutDistribution::Uniform, 1_000_000).unwrap())
    });
}

fn finite_cuts(c: &mut Criterion) {
    let mut group = c.benchmark_group("finite_cut_plan");
    group.sample_size(20);
    for m in [4usize, 12, 20] {
        group.bench_with_input(BenchmarkId::new("lambda5", m), &m, |b, &m| {
            b.iter(|| finite_cut_plan(5.0, black_box(m)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    radial_optimization,
    elementary_evaluation,
    sampling,
    backprojection,
    finite_cuts
);
criterion_main!(benches);
