//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use regionseg::frame::LabelMap;
use regionseg::metrics::FrameLabels;
use regionseg::region::{BBox, RegionMask, RegionSet};
use regionseg::taxonomy::Taxonomy;
use regionseg::tensor::Tensor;

/// Mask value of region `r` at pixel `(x, y)` by nearest-cell lookup.
pub fn mask_value(r: &RegionMask, x: usize, y: usize) -> f64 {
    let b = r.bbox();
    let (xf, yf) = (x as f64, y as f64);
    if !(b.x0 <= xf && xf < b.x1 && b.y0 <= yf && yf < b.y1) {
        return 0.0;
    }
    let shape = r.mask().shape();
    let (hb, wb) = (shape[0], shape[1]);
    let col = (((xf - b.x0) / (b.x1 - b.x0) * wb as f64).floor() as usize).min(wb - 1);
    let row = (((yf - b.y0) / (b.y1 - b.y0) * hb as f64).floor() as usize).min(hb - 1);
    f64::from(r.mask().data()[row * wb + col])
}

/// `y[j,k]` as a literal max over the background and every covering region,
/// plus the winner (`None` = background) for each entry.
pub fn brute_force_fusion(
    regions: &RegionSet,
    scores: &Array2<f64>,
    background: &Array1<f64>,
) -> (Array3<f64>, Array3<Option<usize>>) {
    let (h, w, k) = (regions.frame_height, regions.frame_width, background.len());
    let mut out = Array3::zeros((h, w, k));
    let mut winner = Array3::from_elem((h, w, k), None);
    for y in 0..h {
        for x in 0..w {
            for c in 0..k {
                let mut best = background[c];
                let mut who = None;
                for (i, r) in regions.iter().enumerate() {
                    let m = mask_value(r, x, y);
                    if m > 0.0 && m * scores[[i, c]] > best {
                        best = m * scores[[i, c]];
                        who = Some(i);
                    }
                }
                out[[y, x, c]] = best;
                winner[[y, x, c]] = who;
            }
        }
    }
    (out, winner)
}

pub fn random_region_set(rng: &mut impl Rng, w: usize, h: usize, n: usize) -> RegionSet {
    let regions = (0..n)
        .map(|_| {
            let x0 = rng.random_range(-3.0..w as f64 - 0.5);
            let y0 = rng.random_range(-3.0..h as f64 - 0.5);
            let bw = rng.random_range(0.5..w as f64);
            let bh = rng.random_range(0.5..h as f64);
            let (hb, wb) = (rng.random_range(1..=5), rng.random_range(1..=5));
            let data = (0..hb * wb)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0f32..=1.0) })
                .collect();
            RegionMask::new(BBox::new(x0, y0, x0 + bw, y0 + bh), Tensor::new(vec![hb, wb], data).unwrap()).unwrap()
        })
        .collect();
    RegionSet::new(regions, w, h)
}

/// Pixel `(y, x)` is in the band when some pixel within Chebyshev distance
/// `r` has a 4-neighbour with a different label.
pub fn brute_force_band(labels: &Array2<u16>, r: usize) -> Array2<bool> {
    let (h, w) = labels.dim();
    let is_boundary = |y: usize, x: usize| {
        let v = labels[[y, x]];
        let n: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        n.iter().any(|&(dy, dx)| {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && labels[[yy as usize, xx as usize]] != v
        })
    };
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut hit = false;
        for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
            for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                hit |= is_boundary(yy, xx);
            }
        }
        hit
    })
}

/// Global accuracy, mean class accuracy and mean IoU by scanning pixels,
/// accumulating per-class counts over the whole dataset.
pub fn naive_metrics(
    pred: &[&LabelMap],
    gt: &[&LabelMap],
    k: usize,
    band: Option<usize>,
) -> [Option<f64>; 3] {
    let (mut tp, mut gt_n, mut pred_n) = (vec![0u64; k], vec![0u64; k], vec![0u64; k]);
    let (mut correct, mut total) = (0u64, 0u64);
    for (p, g) in pred.iter().zip(gt) {
        let excluded = band.map(|r| brute_force_band(&g.labels, r));
        let (h, w) = g.labels.dim();
        for y in 0..h {
            for x in 0..w {
                if g.ignore.as_ref().is_some_and(|m| m[[y, x]]) || excluded.as_ref().is_some_and(|m| m[[y, x]]) {
                    continue;
                }
                let (gv, pv) = (g.labels[[y, x]] as usize, p.labels[[y, x]] as usize);
                total += 1;
                gt_n[gv] += 1;
                pred_n[pv] += 1;
                if gv == pv {
                    correct += 1;
                    tp[gv] += 1;
                }
            }
        }
    }
    let global = (total > 0).then(|| correct as f64 / total as f64);
    let (mut acc_sum, mut acc_n, mut iou_sum, mut iou_n) = (0.0, 0usize, 0.0, 0usize);
    for c in 0..k {
        if gt_n[c] > 0 {
            acc_sum += tp[c] as f64 / gt_n[c] as f64;
            acc_n += 1;
        }
        let union = gt_n[c] + pred_n[c] - tp[c];
        if union > 0 {
            iou_sum += tp[c] as f64 / union as f64;
            iou_n += 1;
        }
    }
    [global, (acc_n > 0).then(|| acc_sum / acc_n as f64), (iou_n > 0).then(|| iou_sum / iou_n as f64)]
}

/// Random ground truth with valid pairs and optional ignore pixels, plus an
/// unrelated random prediction.
pub fn random_frame_pair(rng: &mut impl Rng, tax: &Taxonomy, h: usize, w: usize) -> (FrameLabels, FrameLabels) {
    let pairs = tax.valid_pairs();
    let mut a = Array2::zeros((h, w));
    let mut c = Array2::zeros((h, w));
    let mut joint = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let j = rng.random_range(0..pairs.len());
            // blocky labels so that boundaries and interiors both occur
            let j = if x > 0 && rng.random_bool(0.6) { joint[[y, x - 1]] as usize } else { j };
            joint[[y, x]] = j as u16;
            a[[y, x]] = pairs[j].0 as u16;
            c[[y, x]] = pairs[j].1 as u16;
        }
    }
    let ignore = rng
        .random_bool(0.5)
        .then(|| Array2::from_shape_fn((h, w), |_| rng.random_bool(0.1)));
    let mut gt_a = LabelMap::new(a);
    if let Some(ig) = ignore {
        gt_a = gt_a.with_ignore(ig);
    }
    let gt = FrameLabels::from_pair_maps(gt_a, LabelMap::new(c), tax).unwrap();
    let rand_map = |rng: &mut dyn rand::RngCore, k: usize| {
        LabelMap::new(Array2::from_shape_fn((h, w), |_| rng.random_range(0..k) as u16))
    };
    let pred = FrameLabels {
        actor: rand_map(rng, tax.num_actors()),
        action: rand_map(rng, tax.num_actions()),
        joint: rand_map(rng, tax.num_pairs()),
    };
    (pred, gt)
}
