use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dsoftki_bench::fixture;
use dsoftki_core::interp::assemble_interp;
use dsoftki_core::model::{fit, lowrank_objective_value, FitOptions, ObjectiveOptions};
use dsoftki_core::{NormTransform, Observations};

fn interpolation(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble_interp");
    for d in [2, 6] {
        let (x, _, params) = fixture(1024, 128, d);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| assemble_interp(black_box(&x), &params.field, Observations::ValuesAndGradients))
        });
    }
    group.finish();
}

fn objective(c: &mut Criterion) {
    let mut group = c.benchmark_group("lowrank_objective");
    group.sample_size(10);
    for m in [64, 128] {
        let (x, y, params) = fixture(1024, m, 2);
        let opts = ObjectiveOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| lowrank_objective_value(black_box(&x), &y, &params, &opts).unwrap())
        });
    }
    group.finish();
}

fn posterior_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    let (x, y, params) = fixture(4096, 128, 2);
    group.bench_function("n4096_m128", |b| {
        b.iter(|| fit(black_box(&x), &y, &params, NormTransform::identity(2), &FitOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, interpolation, objective, posterior_fit);
criterion_main!(benches);
