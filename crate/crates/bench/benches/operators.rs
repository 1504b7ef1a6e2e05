use criterion::{criterion_group, criterion_main, Criterion};
use geotomo::transport::MinNormSettings;
use geotomo::{Backprojector, Denominator, PdeAdjoint, RayTransform};
use geotomo_bench::fixture;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for name in ["euclid", "paper-slow"] {
        let fx = fixture(name, 0.1);
        group.bench_function(format!("build/{name}"), |b| {
            b.iter(|| RayTransform::for_medium(&fx.grid, 1, &fx.medium, 200, 0.01).unwrap())
        });
        let op = RayTransform::for_medium(&fx.grid, 1, &fx.medium, 200, 0.01).unwrap();
        group.bench_function(format!("apply/{name}"), |b| b.iter(|| op.apply(&fx.field).unwrap()));
    }
    group.finish();
}

fn adjoint(c: &mut Criterion) {
    let mut group = c.benchmark_group("adjoint");
    group.sample_size(10);
    for name in ["euclid", "paper-slow"] {
        let fx = fixture(name, 0.1);
        let back = Backprojector::for_medium(&fx.grid, 1, &fx.medium, 0.01, Denominator::Geometric).unwrap();
        group.bench_function(format!("integral/{name}"), |b| b.iter(|| back.apply(&fx.data).unwrap()));
    }
    let fx = fixture("euclid", 0.1);
    for epsilon in [0.0, 0.01] {
        group.bench_function(format!("pde/eps={epsilon}"), |b| {
            b.iter(|| {
                PdeAdjoint::with_settings(&fx.grid, 1, 0.1, epsilon, MinNormSettings::default())
                    .and_then(|pde| pde.apply(&fx.data))
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward, adjoint);
criterion_main!(benches);
