use criterion::{criterion_group, criterion_main, Criterion};
use mdsyn_bench::{image_pair, planar_matches};
use mdsyn_core::estimators::{estimate_homography_dlt, ransac_homography};
use mdsyn_core::eventsim::{generate_event_image, EventSimConfig};
use mdsyn_core::matcher::{BaselineMatcher, Matcher};
use mdsyn_core::metrics::{auc, ssim};
use mdsyn_core::RansacConfig;
use std::hint::black_box;

fn estimators(c: &mut Criterion) {
    let (_, clean) = planar_matches(1, 200, 0);
    c.bench_function("dlt_200", |b| b.iter(|| estimate_homography_dlt(black_box(&clean)).unwrap()));
    let (_, mixed) = planar_matches(2, 200, 100);
    let cfg = RansacConfig::homography().with_seed(3);
    c.bench_function("ransac_homography_200_half_outliers", |b| b.iter(|| ransac_homography(black_box(&mixed), &cfg).unwrap()));
}

fn images(c: &mut Criterion) {
    let (a, b, _) = image_pair(4, 320, 240);
    let cfg = EventSimConfig::new(0.2, 2.0, 5);
    c.bench_function("event_image_320x240", |bch| bch.iter(|| generate_event_image(black_box(&a), &cfg).unwrap()));
    let (ga, gb) = (a.to_gray(), b.to_gray());
    c.bench_function("ssim_320x240", |bch| bch.iter(|| ssim(black_box(&ga), black_box(&gb)).unwrap()));
    let matcher = BaselineMatcher::default();
    let mut group = c.benchmark_group("matcher");
    group.sample_size(10);
    group.bench_function("baseline_320x240", |bch| bch.iter(|| matcher.match_images(black_box(&a), black_box(&b), "a", "b").unwrap()));
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let errors: Vec<f64> = (0..10_000).map(|i| (i % 97) as f64 * 0.3).collect();
    c.bench_function("auc_10k", |b| b.iter(|| auc(black_box(&errors), 10.0).unwrap()));
}

criterion_group!(benches, estimators, images, metrics);
criterion_main!(benches);
