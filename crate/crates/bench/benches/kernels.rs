use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::{Array1, Array2, Array3};
use regionseg::fusion::region_to_pixel_forward;
use regionseg::metrics::{evaluate_all, EvalOptions, FrameLabels};
use regionseg::regionhead::roi_pool_forward;
use regionseg::synthdata::{generate_dataset, SceneSpec};

fn fusion(c: &mut Criterion) {
    let spec = SceneSpec { min_actors: 3, max_actors: 3, ..Default::default() };
    let frame = &generate_dataset(&spec, 1, 3).unwrap()[0];
    let n = frame.regions.len();
    let scores = Array2::from_shape_fn((n, 8), |(i, k)| ((i * 8 + k) as f64 * 0.37).sin());
    let bg = Array1::from_elem(8, -1.0);
    c.bench_function("region_to_pixel_forward 32x32 3 regions", |b| {
        b.iter(|| region_to_pixel_forward(&frame.regions, scores.view(), bg.view()).unwrap())
    });
}

fn roi_pool(c: &mut Criterion) {
    let spec = SceneSpec { min_actors: 3, max_actors: 3, ..Default::default() };
    let frame = &generate_dataset(&spec, 1, 3).unwrap()[0];
    let features = Array3::from_shape_fn((32, 32, 16), |(y, x, k)| ((y * 31 + x * 7 + k) as f64 * 0.11).cos());
    let boxes = frame.regions.boxes();
    c.bench_function("roi_pool_forward G=7 C=16", |b| b.iter(|| roi_pool_forward(features.view(), &boxes, 7).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let spec = SceneSpec::default();
    let frames = generate_dataset(&spec, 50, 8).unwrap();
    let gts: Vec<FrameLabels> = frames.iter().map(|f| FrameLabels::ground_truth(f, &spec.taxonomy).unwrap()).collect();
    let options = EvalOptions { non_boundary: true, radius: 7 };
    c.bench_function("evaluate_all 50 frames with band", |b| {
        b.iter(|| evaluate_all(&gts, &gts, &spec.taxonomy, &options).unwrap())
    });
}

criterion_group!(benches, fusion, roi_pool, metrics);
criterion_main!(benches);
