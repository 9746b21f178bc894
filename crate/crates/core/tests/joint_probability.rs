use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionseg::fusion::{joint_labeling, joint_probability, softmax_pixelwise, ProbMap, ScoreMap};
use regionseg::taxonomy::Taxonomy;

#[test]
fn joint_sums_to_one_on_random_pixels() {
    let tax = Taxonomy::a2d();
    let (ka, kc) = (tax.num_actors(), tax.num_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores = |k: usize, rng: &mut ChaCha8Rng| {
        ScoreMap::new(Array3::from_shape_fn((10, 100, k), |_| rng.random_range(-6.0..6.0)))
    };
    let pa = softmax_pixelwise(&scores(ka, &mut rng));
    let pc = softmax_pixelwise(&scores(kc, &mut rng));
    for mask in [false, true] {
        let joint = joint_probability(&pa, &pc, &tax, mask).unwrap();
        for lane in joint.values.lanes(ndarray::Axis(2)) {
            assert!((lane.sum() - 1.0).abs() <= 1e-9);
        }
    }
    let joint = joint_probability(&pa, &pc, &tax, false).unwrap();
    for ((y, x, i), &v) in joint.values.indexed_iter() {
        assert_eq!(v, pa.values[[y, x, i / kc]] * pc.values[[y, x, i % kc]]);
    }
}

#[test]
fn one_hot_inputs_give_one_hot_joint() {
    let tax = Taxonomy::a2d();
    let (ka, kc) = (tax.num_actors(), tax.num_actions());
    for &(a, c) in tax.valid_pairs() {
        let mut pa = Array3::zeros((1, 1, ka));
        let mut pc = Array3::zeros((1, 1, kc));
        pa[[0, 0, a]] = 1.0;
        pc[[0, 0, c]] = 1.0;
        let joint = joint_probability(&ProbMap { values: pa }, &ProbMap { values: pc }, &tax, false).unwrap();
        for (i, &v) in joint.values.iter().enumerate() {
            assert_eq!(v, if i == a * kc + c { 1.0 } else { 0.0 });
        }
        let label = joint_labeling(&joint, &tax).unwrap();
        assert_eq!(tax.pair(label.labels[[0, 0]] as usize), Some((a, c)));
    }
}
