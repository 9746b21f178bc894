//! Acceptance criteria 1-9. Each test prints one `criterion N: PASS|FAIL`
//! line on stderr (bypassing output capture) before asserting.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::io::Write;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionseg::fusion::{joint_labeling, joint_probability, region_to_pixel_forward, softmax_pixelwise, ProbMap, ScoreMap};
use regionseg::gradcheck::gradient_suite;
use regionseg::metrics::{
    confusion_counts, evaluate_all, global_accuracy, mean_class_accuracy, mean_class_iou, EvalOptions, FrameLabels,
    MetricsReport, Setting,
};
use regionseg::synthdata::{
    corrupt_masks, generate_dataset, read_dataset, read_predictions, write_dataset, write_predictions,
    CorruptionSpec, Dataset, SceneSpec,
};
use regionseg::training::{train_two_stage, TrainConfig};
use regionseg::{FrameSample, HeadMode, LabelMap, Model, ModelConfig, RegionSet, StreamMode, Taxonomy};

const SEEDS: [u64; 3] = [0, 1, 2];
const TRAIN_FRAMES: usize = 200;
const TEST_FRAMES: usize = 50;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {n}: {verdict} ({detail})");
}

struct SeedResult {
    seed: u64,
    baseline_action_cls: f64,
    region_action_cls: f64,
    rgb_only_region_action_cls: f64,
    /// Joint mean IoU with ground-truth, mildly and severely corrupted masks.
    joint_iou: [f64; 3],
}

struct Experiment {
    results: Vec<SeedResult>,
    models: Vec<Model>,
    elapsed: Duration,
}

fn labels_of(model: &Model, frame: &FrameSample, tax: &Taxonomy, mode: HeadMode, regions: &RegionSet) -> FrameLabels {
    let p = model.predict(frame, mode, Some(regions), tax).unwrap();
    FrameLabels { actor: p.actor, action: p.action, joint: p.joint }
}

fn evaluate(model: &Model, test: &[FrameSample], tax: &Taxonomy, mode: HeadMode, c: Option<&CorruptionSpec>) -> MetricsReport {
    let (preds, gts): (Vec<_>, Vec<_>) = test
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let regions = match c {
                Some(c) => corrupt_masks(&f.regions, &CorruptionSpec { seed: c.seed + i as u64, ..c.clone() }).unwrap(),
                None => f.regions.clone(),
            };
            (labels_of(model, f, tax, mode, &regions), FrameLabels::ground_truth(f, tax).unwrap())
        })
        .unzip();
    evaluate_all(&preds, &gts, tax, &EvalOptions::default()).unwrap()
}

fn action_cls(r: &MetricsReport) -> f64 {
    r.setting(Setting::Action).mean_class_accuracy.unwrap()
}

fn train(seed: u64, train: &[FrameSample], spec: &SceneSpec, streams: StreamMode) -> Model {
    let mut config = ModelConfig::new(spec.appearance_channels(), spec.motion_channels(), &spec.taxonomy);
    config.streams = streams;
    let (params, _) = train_two_stage(train, &spec.taxonomy, &config, &TrainConfig::toy(seed)).unwrap();
    Model::new(config, params)
}

/// Trains both stream modes for every seed (in parallel) on part-motion
/// scenes, then scores each model on held-out frames.
fn experiment() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let spec = SceneSpec::default();
        assert_eq!(spec.part_fraction, 0.25);
        assert!(spec.taxonomy.num_actions() - 1 >= 3);
        let tax = &spec.taxonomy;
        let per_seed: Vec<(SeedResult, Model)> = std::thread::scope(|s| {
            let handles: Vec<_> = SEEDS
                .iter()
                .map(|&seed| {
                    let spec = &spec;
                    s.spawn(move || {
                        let train_set = generate_dataset(spec, TRAIN_FRAMES, 1000 + seed).unwrap();
                        let test = generate_dataset(spec, TEST_FRAMES, 2000 + seed).unwrap();
                        let (flow, rgb) = std::thread::scope(|s2| {
                            let a = s2.spawn(|| train(seed, &train_set, spec, StreamMode::RgbFlow));
                            let b = s2.spawn(|| train(seed, &train_set, spec, StreamMode::RgbOnly));
                            (a.join().unwrap(), b.join().unwrap())
                        });
                        let region = evaluate(&flow, &test, tax, HeadMode::Region, None);
                        let mild = evaluate(&flow, &test, tax, HeadMode::Region, Some(&CorruptionSpec::mild(seed * 1000)));
                        let severe =
                            evaluate(&flow, &test, tax, HeadMode::Region, Some(&CorruptionSpec::severe(seed * 1000)));
                        let iou = |r: &MetricsReport| r.setting(Setting::ActorAction).mean_class_iou.unwrap();
                        let result = SeedResult {
                            seed,
                            baseline_action_cls: action_cls(&evaluate(&flow, &test, tax, HeadMode::Baseline, None)),
                            region_action_cls: action_cls(&region),
                            rgb_only_region_action_cls: action_cls(&evaluate(&rgb, &test, tax, HeadMode::Region, None)),
                            joint_iou: [iou(&region), iou(&mild), iou(&severe)],
                        };
                        (result, flow)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let (results, models) = per_seed.into_iter().unzip();
        Experiment { results, models, elapsed: start.elapsed() }
    })
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let entries = gradient_suite(0, false);
    let elapsed = start.elapsed();
    let faulty = gradient_suite(0, true);
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    let pass = entries.len() == 7
        && entries.iter().all(|e| e.passed())
        && faulty.iter().all(|e| !e.passed())
        && elapsed < Duration::from_secs(120);
    report(1, pass, &format!("7 operations, worst relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()));
    assert!(pass, "{entries:?}");
}

#[test]
fn criterion_2_fusion_oracle() {
    let mut worst = 0.0f64;
    let mut exact = true;
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let (n, k) = (rng.random_range(0..=8), rng.random_range(1..=6));
        let regions = oracles::random_region_set(&mut rng, w, h, n);
        let scores = Array2::from_shape_fn((n, k), |_| rng.random_range(-2.0..2.0));
        let bg = Array1::from_shape_fn(k, |_| rng.random_range(-2.0..2.0));
        let (y, witness) = region_to_pixel_forward(&regions, scores.view(), bg.view()).unwrap();
        let (expected, _) = oracles::brute_force_fusion(&regions, &scores, &bg);
        worst = y.values.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        exact &= witness.reconstruct(scores.view(), bg.view()) == y.values;
    }
    let pass = worst <= 1e-6 && exact;
    report(2, pass, &format!("200 instances, max deviation {worst:.1e}, witness exact: {exact}"));
    assert!(pass);
}

#[test]
fn criterion_3_metrics_oracle() {
    let tax = Taxonomy::synthetic();
    let options = EvalOptions { non_boundary: true, radius: 2 };
    let mut mismatches = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=4);
        let (pred, gt): (Vec<_>, Vec<_>) = (0..n)
            .map(|_| {
                let (h, w) = (rng.random_range(1..=10), rng.random_range(1..=10));
                oracles::random_frame_pair(&mut rng, &tax, h, w)
            })
            .unzip();
        let r = evaluate_all(&pred, &gt, &tax, &options).unwrap();
        let pick = |f: &FrameLabels, s: Setting| match s {
            Setting::Actor => f.actor.clone(),
            Setting::Action => f.action.clone(),
            Setting::ActorAction => f.joint.clone(),
        };
        for (i, s) in Setting::ALL.into_iter().enumerate() {
            let k = [tax.num_actors(), tax.num_actions(), tax.num_pairs()][i];
            let p: Vec<LabelMap> = pred.iter().map(|f| pick(f, s)).collect();
            let g: Vec<LabelMap> = gt.iter().map(|f| pick(f, s)).collect();
            let (pr, gr): (Vec<&LabelMap>, Vec<&LabelMap>) = (p.iter().collect(), g.iter().collect());
            for (variant, band) in [(r.all[i], None), (r.non_boundary.unwrap()[i], Some(2))] {
                let got = [variant.global_accuracy, variant.mean_class_accuracy, variant.mean_class_iou];
                if got != oracles::naive_metrics(&pr, &gr, k, band) {
                    mismatches += 1;
                }
            }
        }
    }
    let gt = LabelMap::new(ndarray::array![[0u16, 0, 1, 1]]);
    let pred = LabelMap::new(ndarray::array![[0u16, 1, 1, 1]]);
    let c = confusion_counts(&pred, &gt, 2).unwrap();
    let fixture_ok = global_accuracy(&c) == Some(0.75)
        && mean_class_accuracy(&c) == Some(0.75)
        && (mean_class_iou(&c).unwrap() - 0.583333333).abs() <= 1e-9;
    let pass = mismatches == 0 && fixture_ok;
    report(3, pass, &format!("100 datasets, {mismatches} mismatches, hand fixture ok: {fixture_ok}"));
    assert!(pass);
}

#[test]
fn criterion_4_joint_probability() {
    let tax = Taxonomy::a2d();
    let (ka, kc) = (tax.num_actors(), tax.num_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut random = |k: usize| ScoreMap::new(Array3::from_shape_fn((1, 1000, k), |_| rng.random_range(-8.0..8.0)));
    let (pa, pc) = (softmax_pixelwise(&random(ka)), softmax_pixelwise(&random(kc)));
    let joint = joint_probability(&pa, &pc, &tax, false).unwrap();
    let worst = joint.values.lanes(ndarray::Axis(2)).into_iter().map(|l| (l.sum() - 1.0).abs()).fold(0.0, f64::max);
    let mut one_hot = true;
    for a in 0..ka {
        for c in 0..kc {
            let mut x = Array3::zeros((1, 1, ka));
            let mut y = Array3::zeros((1, 1, kc));
            x[[0, 0, a]] = 1.0;
            y[[0, 0, c]] = 1.0;
            let j = joint_probability(&ProbMap { values: x }, &ProbMap { values: y }, &tax, false).unwrap();
            one_hot &= j.values.iter().enumerate().all(|(i, &v)| v == if i == a * kc + c { 1.0 } else { 0.0 });
            if let Some(idx) = tax.pair_index(a, c).unwrap() {
                one_hot &= joint_labeling(&j, &tax).unwrap().labels[[0, 0]] as usize == idx;
            }
        }
    }
    let pass = worst <= 1e-9 && one_hot;
    report(4, pass, &format!("1000 pixels, max |sum - 1| = {worst:.1e}, one-hot preserved: {one_hot}"));
    assert!(pass);
}

#[test]
fn criterion_5_consistency_invariant() {
    let spec = SceneSpec::default();
    let frames = generate_dataset(&spec, 200, 5150).unwrap();
    let (mut shapes, mut consistent, mut baseline_split) = (0, 0, 0);
    for model in &experiment().models {
        let mut m = model.clone();
        m.params.background_actor.fill(-1e6);
        m.params.background_action.fill(-1e6);
        for f in &frames {
            let region = labels_of(&m, f, &spec.taxonomy, HeadMode::Region, &f.regions);
            let base = labels_of(&m, f, &spec.taxonomy, HeadMode::Baseline, &f.regions);
            for r in f.regions.iter() {
                let pixels = r.rasterize(f.width(), f.height());
                let distinct = |l: &LabelMap| {
                    let mut v: Vec<u16> = pixels.iter().map(|&(j, _)| l.labels.as_slice().unwrap()[j]).collect();
                    v.sort_unstable();
                    v.dedup();
                    v.len()
                };
                shapes += 1;
                consistent += usize::from(distinct(&region.action) == 1);
                baseline_split += usize::from(distinct(&base.action) > 1);
            }
        }
    }
    let pass = shapes > 0 && consistent == shapes;
    report(
        5,
        pass,
        &format!("{consistent}/{shapes} shapes constant in region mode; baseline splits {baseline_split}"),
    );
    assert!(pass);
}

#[test]
fn criterion_6_region_head_beats_baseline() {
    let e = experiment();
    let margins: Vec<f64> = e.results.iter().map(|r| r.region_action_cls - r.baseline_action_cls).collect();
    let detail: Vec<String> = e
        .results
        .iter()
        .map(|r| format!("seed {}: region {:.3} vs baseline {:.3}", r.seed, r.region_action_cls, r.baseline_action_cls))
        .collect();
    let pass = margins.iter().all(|&m| m >= 0.05) && e.elapsed < Duration::from_secs(600);
    report(6, pass, &format!("{}; {:.0}s", detail.join(", "), e.elapsed.as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_7_mask_quality_ordering() {
    let e = experiment();
    let detail: Vec<String> = e
        .results
        .iter()
        .map(|r| format!("seed {}: {:.3} >= {:.3} >= {:.3}", r.seed, r.joint_iou[0], r.joint_iou[1], r.joint_iou[2]))
        .collect();
    let pass = e.results.iter().all(|r| r.joint_iou[0] >= r.joint_iou[1] && r.joint_iou[1] >= r.joint_iou[2]);
    report(7, pass, &format!("joint mean IoU gt/mild/severe: {}", detail.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_8_motion_stream_helps() {
    let e = experiment();
    let detail: Vec<String> = e
        .results
        .iter()
        .map(|r| format!("seed {}: {:.3} vs {:.3}", r.seed, r.region_action_cls, r.rgb_only_region_action_cls))
        .collect();
    let pass = e.results.iter().all(|r| r.region_action_cls >= r.rgb_only_region_action_cls);
    report(8, pass, &format!("action mean class accuracy rgb_flow vs rgb_only: {}", detail.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_9_determinism_and_formats() {
    let bin = env!("CARGO_BIN_EXE_regionseg");
    let t = tempfile::tempdir().unwrap();
    let spec = SceneSpec::default();
    let dataset = Dataset { taxonomy: spec.taxonomy.clone(), frames: generate_dataset(&spec, 10, 99).unwrap() };
    let ds = t.path().join("ds");
    write_dataset(&dataset, &ds).unwrap();
    let dataset_ok = read_dataset(&ds).unwrap() == dataset;

    let mut params = Vec::new();
    for run in ["a", "b"] {
        let out = t.path().join(run);
        let status = Command::new(bin)
            .args(["train", "--dataset", ds.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .args(["--seed", "7", "--stage1-iters", "40", "--stage2-iters", "40"])
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        params.push(std::fs::read(out.join("params.bin")).unwrap());
    }
    let params_ok = params[0] == params[1];

    let preds: Vec<FrameLabels> =
        dataset.frames.iter().map(|f| FrameLabels::ground_truth(f, &dataset.taxonomy).unwrap()).collect();
    let preds: Vec<FrameLabels> = preds
        .into_iter()
        .map(|p| FrameLabels {
            actor: LabelMap::new(p.actor.labels),
            action: LabelMap::new(p.action.labels),
            joint: LabelMap::new(p.joint.labels),
        })
        .collect();
    let pd = t.path().join("pred");
    write_predictions(&preds, &pd).unwrap();
    let preds_ok = read_predictions(&pd).unwrap() == preds;

    let code = |fault: bool| {
        let mut c = Command::new(bin);
        c.arg("gradcheck");
        if fault {
            c.arg("--inject-fault");
        }
        c.output().unwrap().status.code()
    };
    let exits_ok = code(false) == Some(0) && code(true) == Some(1);
    let pass = dataset_ok && params_ok && preds_ok && exits_ok;
    report(
        9,
        pass,
        &format!("params identical: {params_ok}, dataset round trip: {dataset_ok}, predictions round trip: {preds_ok}, gradcheck exits 0/1: {exits_ok}"),
    );
    assert!(pass);
}
