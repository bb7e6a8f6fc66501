use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rotodt::recon::backpropagate;
use rotodt::transform::{ndft_direct, nufft_adjoint, nufft_forward};
use rotodt_bench::Fixture;

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    g.sample_size(10);
    for n in [16, 24] {
        let f = Fixture::new(n, Some(8));
        let x = f.volume.to_complex();
        g.bench_with_input(BenchmarkId::new("direct", n), &n, |b, _| {
            b.iter(|| ndft_direct(&x, &f.samples.points).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("nufft", n), &n, |b, _| {
            b.iter(|| nufft_forward(&x, &f.samples.points, 1e-6).unwrap())
        });
    }
    g.finish();
}

fn adjoint_and_backprop(c: &mut Criterion) {
    let mut g = c.benchmark_group("reconstruct");
    g.sample_size(10);
    for n in [32, 48] {
        let f = Fixture::new(n, None);
        g.bench_with_input(BenchmarkId::new("adjoint", n), &n, |b, _| {
            b.iter(|| nufft_adjoint(&f.samples, f.grid, 1e-6).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("backprop", n), &n, |b, _| {
            b.iter(|| {
                backpropagate(&f.samples, &f.design, &f.trajectory, f.grid, &f.waves, f.indicatrix, 1e-6).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward, adjoint_and_backprop);
criterion_main!(benches);
