use criterion::{criterion_group, criterion_main, Criterion};

use facetrack_core::pipesim::{fit, full_pipeline, rank_allocations, solve_gating_fraction, placement_runs, Anchors};

fn pipesim(c: &mut Criterion) {
    let cal = fit(&Anchors::default());
    let runs = placement_runs();
    let full = full_pipeline();
    c.bench_function("fit", |b| b.iter(|| fit(&Anchors::default())));
    c.bench_function("rank_table1", |b| b.iter(|| rank_allocations(&cal, &runs, 1.0).unwrap()));
    c.bench_function("solve_gating_298", |b| {
        b.iter(|| solve_gating_fraction(&cal, &full, 298.0).unwrap())
    });
}

criterion_group!(benches, pipesim);
criterion_main!(benches);
