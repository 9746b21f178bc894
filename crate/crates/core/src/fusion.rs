//! Region-to-pixel max fusion, pixelwise softmax, joint actor-action
//! probabilities and argmax labeling.
//!
//! For pixel `j` and class `k` the fused score is
//!
//! ```text
//! y[j, k] = max( bg[k], max_{i : m_ij > 0} m_ij * s[i, k] )
//! ```
//!
//! where `bg` is a learnable background score vector acting as an implicit
//! full-frame region with `m = 1`. Ties resolve toward the background, then
//! toward the lowest region index. Mask probabilities are constants: they
//! receive no gradient.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::frame::LabelMap;
use crate::region::RegionSet;
use crate::taxonomy::Taxonomy;

/// Per-region class scores for both tasks, `(N, K_actor)` and `(N, K_action)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionScores {
    pub actor: Array2<f64>,
    pub action: Array2<f64>,
}

/// Per-pixel class scores, `(H, W, K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub values: Array3<f64>,
}

/// Per-pixel class probabilities, `(H, W, K)`; each pixel sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub values: Array3<f64>,
}

impl ScoreMap {
    pub fn new(values: Array3<f64>) -> Self {
        Self { values }
    }

    pub fn num_classes(&self) -> usize {
        self.values.dim().2
    }
}

impl ProbMap {
    pub fn num_classes(&self) -> usize {
        self.values.dim().2
    }
}

/// Winning candidate for one (pixel, class) entry of the fused map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Background,
    Region(usize),
}

const BACKGROUND: u32 = u32::MAX;

/// Records, for every pixel and class, which candidate produced the fused
/// score and with which mask weight.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWitness {
    height: usize,
    width: usize,
    classes: usize,
    num_regions: usize,
    source: Vec<u32>,
    weight: Vec<f64>,
}

impl FusionWitness {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.classes)
    }

    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    fn offset(&self, y: usize, x: usize, k: usize) -> usize {
        (y * self.width + x) * self.classes + k
    }

    pub fn source(&self, y: usize, x: usize, k: usize) -> Source {
        match self.source[self.offset(y, x, k)] {
            BACKGROUND => Source::Background,
            i => Source::Region(i as usize),
        }
    }

    /// Mask weight of the winner (1 for the background).
    pub fn weight(&self, y: usize, x: usize, k: usize) -> f64 {
        self.weight[self.offset(y, x, k)]
    }

    /// Rebuilds the fused map from the witness alone.
    pub fn reconstruct(&self, scores: ArrayView2<f64>, background: ArrayView1<f64>) -> Array3<f64> {
        Array3::from_shape_fn((self.height, self.width, self.classes), |(y, x, k)| {
            match self.source(y, x, k) {
                Source::Background => background[k],
                Source::Region(i) => self.weight(y, x, k) * scores[[i, k]],
            }
        })
    }
}

pub fn region_to_pixel_forward(
    regions: &RegionSet,
    scores: ArrayView2<f64>,
    background_scores: ArrayView1<f64>,
) -> Result<(ScoreMap, FusionWitness)> {
    let (n, k) = scores.dim();
    if n != regions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n} score rows for {} regions",
            regions.len()
        )));
    }
    if background_scores.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} background scores for {k} classes",
            background_scores.len()
        )));
    }
    let (h, w) = (regions.frame_height, regions.frame_width);
    let pixels = h * w;

    let mut values = Vec::with_capacity(pixels * k);
    for _ in 0..pixels {
        values.extend(background_scores.iter().copied());
    }
    let mut source = vec![BACKGROUND; pixels * k];
    let mut weight = vec![1.0; pixels * k];

    // Regions in increasing index order with a strict comparison give the
    // background-first, lowest-index-next tie order.
    for (i, region) in regions.iter().enumerate() {
        let row = scores.row(i);
        for (j, m) in region.rasterize(w, h) {
            let base = j * k;
            for (c, &s) in row.iter().enumerate() {
                let v = m * s;
                if v > values[base + c] {
                    values[base + c] = v;
                    source[base + c] = i as u32;
                    weight[base + c] = m;
                }
            }
        }
    }

    let values = Array3::from_shape_vec((h, w, k), values).expect("sized above");
    let witness = FusionWitness {
        height: h,
        width: w,
        classes: k,
        num_regions: n,
        source,
        weight,
    };
    Ok((ScoreMap::new(values), witness))
}

/// Subgradient of the max fusion. Returns `(grad_scores (N, K), grad_background (K))`.
pub fn region_to_pixel_backward(
    witness: &FusionWitness,
    regions: &RegionSet,
    upstream: ArrayView3<f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    if upstream.dim() != witness.dims() {
        return Err(Error::StaleWitness(format!(
            "upstream {:?} vs witness {:?}",
            upstream.dim(),
            witness.dims()
        )));
    }
    if regions.len() != witness.num_regions
        || (regions.frame_height, regions.frame_width) != (witness.height, witness.width)
    {
        return Err(Error::StaleWitness(format!(
            "witness built for {} regions on {}x{}",
            witness.num_regions, witness.width, witness.height
        )));
    }
    let k = witness.classes;
    let mut grad_scores = Array2::zeros((witness.num_regions, k));
    let mut grad_bg = Array1::zeros(k);
    for (off, (&src, &up)) in witness.source.iter().zip(upstream.iter()).enumerate() {
        let c = off % k;
        if src == BACKGROUND {
            grad_bg[c] += up;
        } else {
            grad_scores[[src as usize, c]] += witness.weight[off] * up;
        }
    }
    Ok((grad_scores, grad_bg))
}

/// Numerically stable per-pixel softmax.
pub fn softmax_pixelwise(scores: &ScoreMap) -> ProbMap {
    let mut values = scores.values.clone();
    for mut lane in values.lanes_mut(Axis(2)) {
        let max = lane.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        lane.mapv_inplace(|v| (v - max).exp());
        let sum = lane.sum();
        lane.mapv_inplace(|v| v / sum);
    }
    ProbMap { values }
}

/// Backward of [`softmax_pixelwise`]: `ds = p * (dp - <p, dp>)` per pixel.
pub fn softmax_backward(probs: &ProbMap, grad_probs: ArrayView3<f64>) -> Result<Array3<f64>> {
    if probs.values.dim() != grad_probs.dim() {
        return Err(Error::ShapeMismatch(format!(
            "softmax backward: {:?} vs {:?}",
            probs.values.dim(),
            grad_probs.dim()
        )));
    }
    let mut out = Array3::zeros(probs.values.dim());
    for ((p, g), mut o) in probs
        .values
        .lanes(Axis(2))
        .into_iter()
        .zip(grad_probs.lanes(Axis(2)))
        .zip(out.lanes_mut(Axis(2)))
    {
        let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for ((o, &p), &g) in o.iter_mut().zip(p.iter()).zip(g.iter()) {
            *o = p * (g - dot);
        }
    }
    Ok(out)
}

/// Joint distribution over all `K_actor * K_action` pairs, indexed
/// `actor * K_action + action`. With `mask_invalid`, pairs outside the
/// taxonomy's valid set are zeroed and each pixel renormalized.
pub fn joint_probability(
    p_actor: &ProbMap,
    p_action: &ProbMap,
    taxonomy: &Taxonomy,
    mask_invalid: bool,
) -> Result<ProbMap> {
    let (h, w, ka) = p_actor.values.dim();
    let (h2, w2, kc) = p_action.values.dim();
    if (h, w) != (h2, w2) {
        return Err(Error::ShapeMismatch(format!(
            "actor map {h}x{w} vs action map {h2}x{w2}"
        )));
    }
    if ka != taxonomy.num_actors() || kc != taxonomy.num_actions() {
        return Err(Error::ShapeMismatch(format!(
            "probability maps have {ka}/{kc} classes, taxonomy {}/{}",
            taxonomy.num_actors(),
            taxonomy.num_actions()
        )));
    }
    let valid: Vec<bool> = (0..ka * kc)
        .map(|i| taxonomy.is_valid_pair(i / kc, i % kc))
        .collect();
    let mut values = Array3::zeros((h, w, ka * kc));
    for y in 0..h {
        for x in 0..w {
            let mut lane = values.slice_mut(ndarray::s![y, x, ..]);
            for a in 0..ka {
                let pa = p_actor.values[[y, x, a]];
                for c in 0..kc {
                    lane[a * kc + c] = pa * p_action.values[[y, x, c]];
                }
            }
            if mask_invalid {
                for (v, &ok) in lane.iter_mut().zip(&valid) {
                    if !ok {
                        *v = 0.0;
                    }
                }
                let sum = lane.sum();
                if sum > 0.0 {
                    lane.mapv_inplace(|v| v / sum);
                } else {
                    let n = taxonomy.num_pairs() as f64;
                    for (v, &ok) in lane.iter_mut().zip(&valid) {
                        *v = if ok { 1.0 / n } else { 0.0 };
                    }
                }
            }
        }
    }
    Ok(ProbMap { values })
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_labeling(probs: &ProbMap) -> LabelMap {
    let (h, w, _) = probs.values.dim();
    let labels = probs
        .values
        .lanes(Axis(2))
        .into_iter()
        .map(|lane| argmax(lane.iter().copied()) as u16)
        .collect();
    LabelMap::new(Array2::from_shape_vec((h, w), labels).expect("lane count"))
}

/// Joint labels expressed as dense valid-pair indices: per pixel, the valid
/// pair with the highest joint probability (ties to the lowest pair index).
pub fn joint_labeling(joint: &ProbMap, taxonomy: &Taxonomy) -> Result<LabelMap> {
    let (h, w, k) = joint.values.dim();
    let kc = taxonomy.num_actions();
    if k != taxonomy.num_actors() * kc {
        return Err(Error::ShapeMismatch(format!(
            "joint map has {k} entries, taxonomy needs {}",
            taxonomy.num_actors() * kc
        )));
    }
    let flat: Vec<usize> = taxonomy.valid_pairs().iter().map(|&(a, c)| a * kc + c).collect();
    let labels = joint
        .values
        .lanes(Axis(2))
        .into_iter()
        .map(|lane| argmax(flat.iter().map(|&i| lane[i])) as u16)
        .collect();
    Ok(LabelMap::new(Array2::from_shape_vec((h, w), labels).expect("lane count")))
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{BBox, RegionMask};
    use crate::tensor::Tensor;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn single_pixel_region(x: usize, y: usize, m: f32) -> RegionMask {
        RegionMask::new(
            BBox::new(x as f64, y as f64, (x + 1) as f64, (y + 1) as f64),
            Tensor::new(vec![1, 1], vec![m]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn no_regions_gives_background_everywhere() {
        let set = RegionSet::empty(3, 2);
        let bg = array![0.5, -1.0, 2.0];
        let (y, wit) =
            region_to_pixel_forward(&set, Array2::zeros((0, 3)).view(), bg.view()).unwrap();
        for lane in y.values.lanes(Axis(2)) {
            assert_eq!(lane.to_vec(), bg.to_vec());
        }
        assert_eq!(wit.source(1, 2, 0), Source::Background);
    }

    #[test]
    fn two_overlapping_regions_take_classwise_max() {
        // pixel covered by region 0 (m=0.8, s=[0.5,0.2]) and region 1 (m=0.4, s=[0.9,0.1])
        let set = RegionSet::new(
            vec![single_pixel_region(0, 0, 0.8), single_pixel_region(0, 0, 0.4)],
            1,
            1,
        );
        let scores = array![[0.5, 0.2], [0.9, 0.1]];
        let (y, wit) =
            region_to_pixel_forward(&set, scores.view(), Array1::zeros(2).view()).unwrap();
        // candidates: class 0 -> 0.40 vs 0.36, class 1 -> 0.16 vs 0.04
        let m0 = f64::from(0.8f32);
        assert_abs_diff_eq!(y.values[[0, 0, 0]], 0.40, epsilon = 1e-7);
        assert_abs_diff_eq!(y.values[[0, 0, 1]], 0.16, epsilon = 1e-7);
        assert_eq!(y.values[[0, 0, 0]], m0 * 0.5);
        assert_eq!(wit.source(0, 0, 0), Source::Region(0));
        assert_eq!(wit.source(0, 0, 1), Source::Region(0));
    }

    #[test]
    fn ties_go_to_lower_region_then_background() {
        let set = RegionSet::new(
            vec![single_pixel_region(0, 0, 1.0), single_pixel_region(0, 0, 1.0)],
            1,
            1,
        );
        let scores = array![[0.3, 0.0], [0.3, 0.0]];
        let (_, wit) =
            region_to_pixel_forward(&set, scores.view(), Array1::zeros(2).view()).unwrap();
        assert_eq!(wit.source(0, 0, 0), Source::Region(0));
        // class 1: both regions tie with the background at 0
        assert_eq!(wit.source(0, 0, 1), Source::Background);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let set = RegionSet::new(vec![single_pixel_region(0, 0, 1.0)], 1, 1);
        assert!(region_to_pixel_forward(&set, Array2::zeros((2, 2)).view(), Array1::zeros(2).view()).is_err());
        assert!(region_to_pixel_forward(&set, Array2::zeros((1, 2)).view(), Array1::zeros(3).view()).is_err());
    }

    #[test]
    fn backward_zero_upstream_and_single_pixel() {
        let set = RegionSet::new(vec![single_pixel_region(1, 0, 0.8)], 2, 1);
        let scores = array![[1.0, 2.0]];
        let (_, wit) =
            region_to_pixel_forward(&set, scores.view(), Array1::zeros(2).view()).unwrap();
        let (gs, gb) =
            region_to_pixel_backward(&wit, &set, Array3::zeros((1, 2, 2)).view()).unwrap();
        assert!(gs.iter().chain(gb.iter()).all(|&v| v == 0.0));

        let mut up = Array3::zeros((1, 2, 2));
        up[[0, 1, 0]] = 1.0;
        up[[0, 1, 1]] = 1.0;
        let (gs, gb) = region_to_pixel_backward(&wit, &set, up.view()).unwrap();
        assert_abs_diff_eq!(gs[[0, 0]], 0.8, epsilon = 1e-7);
        assert_abs_diff_eq!(gs[[0, 1]], 0.8, epsilon = 1e-7);
        assert_eq!(gb.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_detects_stale_witness() {
        let set = RegionSet::new(vec![single_pixel_region(0, 0, 1.0)], 1, 1);
        let (_, wit) = region_to_pixel_forward(
            &set,
            array![[1.0]].view(),
            Array1::zeros(1).view(),
        )
        .unwrap();
        assert!(region_to_pixel_backward(&wit, &set, Array3::zeros((1, 1, 2)).view()).is_err());
        let other = RegionSet::empty(1, 1);
        assert!(region_to_pixel_backward(&wit, &other, Array3::zeros((1, 1, 1)).view()).is_err());
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let s = ScoreMap::new(Array3::from_shape_vec((1, 2, 2), vec![0.0, 0.0, 1000.0, 1000.0]).unwrap());
        let p = softmax_pixelwise(&s);
        assert_eq!(p.values.iter().copied().collect::<Vec<_>>(), vec![0.5; 4]);
    }

    #[test]
    fn joint_outer_product() {
        let t = Taxonomy::new(
            vec!["bg".into(), "a".into()],
            vec!["bg".into(), "c".into()],
            vec![(0, 0), (1, 1)],
            0,
            0,
        )
        .unwrap();
        let pa = ProbMap { values: Array3::from_shape_vec((1, 1, 2), vec![0.5, 0.5]).unwrap() };
        let pc = ProbMap { values: Array3::from_shape_vec((1, 1, 2), vec![1.0, 0.0]).unwrap() };
        let j = joint_probability(&pa, &pc, &t, false).unwrap();
        assert_eq!(j.values.iter().copied().collect::<Vec<_>>(), vec![0.5, 0.0, 0.5, 0.0]);

        // masking drops the invalid (1, 0) pair and renormalizes
        let m = joint_probability(&pa, &pc, &t, true).unwrap();
        assert_eq!(m.values.iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn joint_one_hot() {
        let t = Taxonomy::synthetic();
        let mut pa = Array3::zeros((1, 1, t.num_actors()));
        let mut pc = Array3::zeros((1, 1, t.num_actions()));
        pa[[0, 0, 2]] = 1.0;
        pc[[0, 0, 3]] = 1.0;
        let j = joint_probability(&ProbMap { values: pa }, &ProbMap { values: pc }, &t, false).unwrap();
        let hot: Vec<usize> = j.values.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(hot, vec![2 * t.num_actions() + 3]);
        assert_eq!(j.values[[0, 0, 2 * t.num_actions() + 3]], 1.0);
        let lbl = joint_labeling(&j, &t).unwrap();
        assert_eq!(t.pair(lbl.labels[[0, 0]] as usize), Some((2, 3)));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        let p = ProbMap { values: Array3::from_elem((2, 2, 3), 1.0 / 3.0) };
        assert!(argmax_labeling(&p).labels.iter().all(|&l| l == 0));
        let mut v = Array3::zeros((1, 1, 3));
        v[[0, 0, 2]] = 1.0;
        assert_eq!(argmax_labeling(&ProbMap { values: v }).labels[[0, 0]], 2);
    }
}
