mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionseg::metrics::{boundary_band, evaluate_all, EvalOptions, FrameLabels, MetricsReport, Setting};
use regionseg::taxonomy::Taxonomy;

fn dataset(seed: u64, tax: &Taxonomy) -> (Vec<FrameLabels>, Vec<FrameLabels>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..=4);
    (0..n)
        .map(|_| {
            let (h, w) = (rng.random_range(1..=9), rng.random_range(1..=9));
            oracles::random_frame_pair(&mut rng, tax, h, w)
        })
        .unzip()
}

fn maps(frames: &[FrameLabels], s: Setting) -> Vec<&regionseg::LabelMap> {
    frames
        .iter()
        .map(|f| match s {
            Setting::Actor => &f.actor,
            Setting::Action => &f.action,
            Setting::ActorAction => &f.joint,
        })
        .collect()
}

#[test]
fn evaluate_all_equals_pixel_counting() {
    let tax = Taxonomy::synthetic();
    let options = EvalOptions { non_boundary: true, radius: 1 };
    for seed in 0..100 {
        let (pred, gt) = dataset(seed, &tax);
        let report = evaluate_all(&pred, &gt, &tax, &options).unwrap();
        for (i, s) in Setting::ALL.into_iter().enumerate() {
            let k = [tax.num_actors(), tax.num_actions(), tax.num_pairs()][i];
            let all = oracles::naive_metrics(&maps(&pred, s), &maps(&gt, s), k, None);
            let m = report.all[i];
            assert_eq!([m.global_accuracy, m.mean_class_accuracy, m.mean_class_iou], all, "seed {seed} {s:?}");
            let nb = oracles::naive_metrics(&maps(&pred, s), &maps(&gt, s), k, Some(1));
            let m = report.non_boundary.unwrap()[i];
            assert_eq!([m.global_accuracy, m.mean_class_accuracy, m.mean_class_iou], nb, "seed {seed} {s:?}");
        }
        let back = MetricsReport::from_csv(&report.to_csv(), &report.per_category_csv("m")).unwrap();
        assert_eq!(back, report);
    }
}

#[test]
fn band_matches_brute_force() {
    let tax = Taxonomy::synthetic();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, gt) = oracles::random_frame_pair(&mut rng, &tax, 12, 10);
        for r in 0..4 {
            assert_eq!(boundary_band(&gt.joint, r), oracles::brute_force_band(&gt.joint.labels, r));
        }
    }
}
