use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use facetrack_bench::{cost_matrix, Workload};
use facetrack_core::association::hungarian_min_cost;
use facetrack_core::dcf::{preprocess, respond, train_filter, GaussianLabel, Patch};
use facetrack_core::{DcfParams, DcfTracker, IouParams, IouTracker, MultiTracker, SortParams, SortTracker};

fn run(t: &mut dyn MultiTracker, w: &Workload, images: bool) -> usize {
    let mut ids = 0;
    for (k, d) in w.detections.iter().enumerate() {
        let image = images.then(|| &w.frames()[k]);
        ids += t.step(k as u32 + 1, d, image).unwrap().new_ids.len();
    }
    ids
}

fn trackers(c: &mut Criterion) {
    let w = Workload::crossing();
    let mut g = c.benchmark_group("crossing_30_frames");
    g.bench_function("iou", |b| {
        b.iter(|| run(&mut IouTracker::new(IouParams::default()).unwrap(), &w, false))
    });
    g.bench_function("sort", |b| {
        b.iter(|| run(&mut SortTracker::new(SortParams::default()).unwrap(), &w, false))
    });
    g.bench_function("dcf", |b| {
        b.iter(|| run(&mut DcfTracker::new(DcfParams::default()).unwrap(), &w, true))
    });
    g.finish();
}

fn hungarian(c: &mut Criterion) {
    let mut g = c.benchmark_group("hungarian");
    for n in [8, 32, 128] {
        let m = cost_matrix(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| b.iter(|| hungarian_min_cost(m)));
    }
    g.finish();
}

fn correlation_filter(c: &mut Criterion) {
    let mut g = c.benchmark_group("dcf_train_respond");
    for n in [32usize, 64, 128] {
        let pixels = (0..n * n).map(|k| ((k * 7919) % 251) as f64 / 250.0).collect();
        let x = preprocess(&Patch::new(n, n, pixels).unwrap());
        let label = GaussianLabel::centered(n, n, n as f64 / 20.0).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| {
                let f = train_filter(x, &label, 1e-2).unwrap();
                respond(&f, x).unwrap().psr
            })
        });
    }
    g.finish();
}

criterion_group!(benches, trackers, hungarian, correlation_filter);
criterion_main!(benches);
