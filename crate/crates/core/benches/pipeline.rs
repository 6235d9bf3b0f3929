//! Pipeline stage benchmarks, each run once on a single-thread rayon pool
//! and once on a default-sized pool. Building the crate with
//! `--no-default-features` instead benchmarks the dedicated sequential code
//! path (no rayon in the pipeline at all).

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use camforge_core::exposure::{self, ExposurePolicy};
use camforge_core::isp;
use camforge_core::kid::{kid, FeatureSet};
use camforge_core::rng::PixelRng;
use camforge_core::sensor::{self, SensorConfig};
use camforge_core::SceneIrradiance;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("single-thread", single), ("default-pool", all)]
}

fn test_scene(width: usize, height: usize, bands: usize, pitch: f64) -> SceneIrradiance {
    SceneIrradiance::from_fn("bench", width, height, bands, pitch, |band, r, c| {
        20_000.0 + ((r * 13 + c * 7 + band * 311) % 977) as f32 * 40.0
    })
    .unwrap()
}

fn bench_capture(c: &mut Criterion) {
    let config = SensorConfig::preset("mt9v024-mono", 6.0).unwrap();
    let scene = test_scene(config.array_width_px, config.array_height_px, 1, 6.0);
    let policy = ExposurePolicy::default();
    let mut group = c.benchmark_group("capture");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| {
                pool.install(|| {
                    exposure::capture(black_box(&scene), &config, &policy, 7).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_psf(c: &mut Criterion) {
    let scene = test_scene(634, 298, 1, 6.0);
    let mut group = c.benchmark_group("psf-blur");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| sensor::apply_psf(black_box(&scene), 9.0).unwrap()))
        });
    }
    group.finish();
}

fn bench_demosaic(c: &mut Criterion) {
    let config = SensorConfig::preset("mt9v024-rgb", 6.0).unwrap();
    let scene = test_scene(config.array_width_px, config.array_height_px, 3, 6.0);
    let raw = exposure::capture(&scene, &config, &ExposurePolicy::default(), 7).unwrap();
    let mut group = c.benchmark_group("demosaic");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| isp::demosaic_bilinear(black_box(&raw)).unwrap()))
        });
    }
    group.finish();
}

fn bench_kid(c: &mut Criterion) {
    let (n, d) = (256, 64);
    let make = |tag: u64| {
        let mut rng = PixelRng::keyed(tag, 0);
        let data: Vec<f64> = (0..n * d).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        FeatureSet::new(format!("set-{tag}"), n, d, data).unwrap()
    };
    let (a, b_set) = (make(1), make(2));
    let mut group = c.benchmark_group("kid");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| kid(black_box(&a), &b_set, 64, 0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_capture, bench_psf, bench_demosaic, bench_kid);
criterion_main!(benches);
