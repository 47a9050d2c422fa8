use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use vucalc_bench::{lasso, low_rank, max_of_quadratics};
use vucalc_core::subspace::orthonormal_range;
use vucalc_core::{decompose_pdg, sample_subdifferential, DVector, FastTrack, RankTol, Tolerances};

fn subspaces(c: &mut Criterion) {
    let mut g = c.benchmark_group("orthonormal_range");
    for n in [4, 8, 16] {
        let m = low_rank(1, n, n, n / 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| {
            b.iter(|| orthonormal_range(black_box(m), RankTol::Auto).unwrap())
        });
    }
    g.finish();
}

fn chain_rule(c: &mut Criterion) {
    let tols = Tolerances::default();
    let mut g = c.benchmark_group("analyze");
    for m in [3, 6, 10] {
        let (f, xbar) = max_of_quadratics(2, m, 6, 3);
        g.bench_with_input(BenchmarkId::new("max", m), &(f, xbar), |b, (f, x)| {
            b.iter(|| f.analyze(black_box(x), &tols, false).unwrap())
        });
    }
    let (f, xbar) = lasso(3, 10, 12, 0.2);
    g.bench_function("lasso/10", |b| b.iter(|| f.analyze(black_box(&xbar), &tols, false).unwrap()));
    g.finish();

    let (f, xbar) = max_of_quadratics(2, 6, 6, 3);
    let pdg = f.pdg(&xbar, &tols).unwrap();
    c.bench_function("decompose_pdg/max6", |b| b.iter(|| decompose_pdg(black_box(&pdg), &xbar).unwrap()));
}

fn fast_track(c: &mut Criterion) {
    let tols = Tolerances::default();
    let (f, xbar) = max_of_quadratics(4, 6, 6, 3);
    let ft = FastTrack::new(f.pdg(&xbar, &tols).unwrap(), xbar).unwrap();
    let u = DVector::from_element(ft.dim_u(), 0.01);
    c.bench_function("solve_track/max6", |b| b.iter(|| ft.solve_track(black_box(&u)).unwrap()));
    let tp = ft.solve_track(&u).unwrap();
    c.bench_function("track_jacobian/max6", |b| b.iter(|| ft.track_jacobian(black_box(&tp)).unwrap()));
}

fn sampling(c: &mut Criterion) {
    let (f, xbar) = max_of_quadratics(5, 4, 4, 2);
    c.bench_function("sample_subdifferential/500", |b| {
        b.iter(|| sample_subdifferential(&|x| f.gradient(x, 1e-8), black_box(&xbar), 1e-4, 500, 42).unwrap())
    });
}

criterion_group!(benches, subspaces, chain_rule, fast_track, sampling);
criterion_main!(benches);
