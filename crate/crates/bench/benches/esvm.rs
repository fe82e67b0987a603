use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use esvm::optimizer::esvm_objective;
use esvm::{fit, spectral_variance, FunctionalSeries, LagWindow, SamplerKind};
use esvm_bench::{ar1_series, gmm_chain, gmm_design};

fn spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral_variance");
    let series = FunctionalSeries::new(ar1_series(100_000)).unwrap();
    group.throughput(Throughput::Elements(series.len() as u64));
    for bn in [10, 50, 300] {
        let window = LagWindow::trapezoid(bn).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(bn), &window, |b, w| {
            b.iter(|| spectral_variance(&series, w).unwrap())
        });
    }
    group.finish();
}

fn objective(c: &mut Criterion) {
    let design = gmm_design(100_000, 50);
    let theta = vec![-1.0, -0.2, 0.0, 0.1, -0.1, 0.0];
    c.bench_function("esvm_objective/n=1e5,p=6", |b| b.iter(|| esvm_objective(&theta, &design).unwrap()));
    c.bench_function("fit/esvm,n=1e5,p=6", |b| {
        b.iter(|| fit(&design, esvm::Criterion::Esvm).unwrap())
    });
}

fn samplers(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_chain");
    group.throughput(Throughput::Elements(10_000));
    for kind in [SamplerKind::Ula, SamplerKind::Mala, SamplerKind::Rwm] {
        group.bench_function(BenchmarkId::from_parameter(kind), |b| b.iter(|| gmm_chain(kind, 10_000)));
    }
    group.finish();
}

criterion_group!(benches, spectral, objective, samplers);
criterion_main!(benches);
