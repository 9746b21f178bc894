//! Central finite-difference verification of every differentiable layer.
//!
//! Each check builds a small random instance, forms the scalar objective
//! `sum(U * output)` for a random upstream `U`, and compares the analytic
//! gradient against central differences. Instances are resampled until no
//! max/ReLU decision lies within [`TIE_MARGIN`] of a switch, so the
//! numerical derivative never straddles a kink.

use ndarray::{Array, Array1, Array2, Array3, Array4, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame::LabelMap;
use crate::frontend::{
    baseline_backward, baseline_forward, conv3x3, two_stream_backward, two_stream_forward, BaselineParams,
    FrontendParams, StreamParams,
};
use crate::fusion::{
    region_to_pixel_backward, region_to_pixel_forward, softmax_backward, softmax_pixelwise, ScoreMap,
};
use crate::region::{BBox, RegionMask, RegionSet};
use crate::regionhead::{head_backward, head_forward, roi_pool_backward, roi_pool_forward, HeadParams, HeadShape};
use crate::tensor::Tensor;
use crate::training::actor_action_loss;

pub const DEFAULT_EPS: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Minimum gap between a max/ReLU decision and its switching point.
pub const TIE_MARGIN: f64 = 1e-2;

/// Max over coordinates of `|analytic - numeric| / max(1, |numeric|)` with
/// central differences of step `eps`.
pub fn finite_difference_check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length must match the point");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1.0));
    }
    worst
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub name: &'static str,
    pub parameters: usize,
    pub max_rel_error: f64,
}

impl GradcheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Names of the checked operations, in report order.
pub const OPERATIONS: [&str; 7] = [
    "two_stream_conv",
    "baseline_head",
    "roi_pool",
    "fc_head",
    "region_to_pixel",
    "softmax",
    "actor_action_loss",
];

/// Runs every check. With `inject_fault`, 0.1 is added to one analytic
/// gradient component per check, which must make every check fail.
pub fn gradient_suite(seed: u64, inject_fault: bool) -> Vec<GradcheckEntry> {
    let checks: [fn(&mut ChaCha8Rng) -> Check; 7] = [
        check_two_stream,
        check_baseline,
        check_roi_pool,
        check_fc_head,
        check_region_to_pixel,
        check_softmax,
        check_loss,
    ];
    OPERATIONS
        .iter()
        .zip(checks)
        .enumerate()
        .map(|(i, (&name, build))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let mut check = build(&mut rng);
            if inject_fault {
                check.analytic[0] += 0.1;
            }
            GradcheckEntry {
                name,
                parameters: check.point.len(),
                max_rel_error: finite_difference_check(&check.objective, &check.point, &check.analytic, DEFAULT_EPS),
            }
        })
        .collect()
}

struct Check {
    point: Vec<f64>,
    analytic: Vec<f64>,
    objective: Box<dyn Fn(&[f64]) -> f64>,
}

fn uniform<D: Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(shape: Sh, lo: f64, hi: f64, rng: &mut impl Rng) -> Array<f64, D> {
    Array::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

fn dot<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Packs arrays into one flat vector and unpacks it again.
#[derive(Clone)]
struct Packer {
    shapes: Vec<Vec<usize>>,
}

impl Packer {
    fn new() -> Self {
        Self { shapes: Vec::new() }
    }

    fn push<D: Dimension>(&mut self, out: &mut Vec<f64>, a: &Array<f64, D>) {
        self.shapes.push(a.shape().to_vec());
        out.extend(a.iter().copied());
    }

    fn unpack(&self, flat: &[f64]) -> Vec<ndarray::ArrayD<f64>> {
        let mut off = 0;
        self.shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let a = ndarray::ArrayD::from_shape_vec(s.clone(), flat[off..off + n].to_vec()).unwrap();
                off += n;
                a
            })
            .collect()
    }
}

fn fix<D: Dimension>(a: ndarray::ArrayD<f64>) -> Array<f64, D> {
    a.into_dimensionality::<D>().unwrap()
}

fn stream_from(w: ndarray::ArrayD<f64>, b: ndarray::ArrayD<f64>) -> StreamParams {
    StreamParams { weight: fix(w), bias: fix(b) }
}

fn check_two_stream(rng: &mut ChaCha8Rng) -> Check {
    let (h, w, ca, cm, c) = (5, 5, 3, 2, 3);
    let (app, motion, params) = loop {
        let app: Array3<f64> = uniform((h, w, ca), -1.0, 1.0, rng);
        let motion: Array3<f64> = uniform((h, w, cm), -1.0, 1.0, rng);
        let mut pa = StreamParams::init(ca, c, rng);
        let mut pm = StreamParams::init(cm, c, rng);
        pa.bias = uniform(c, -0.3, 0.3, rng);
        pm.bias = uniform(c, -0.3, 0.3, rng);
        let clear = |x: &Array3<f64>, p: &StreamParams| {
            conv3x3(x.view(), p).unwrap().iter().all(|v| v.abs() > TIE_MARGIN)
        };
        if clear(&app, &pa) && clear(&motion, &pm) {
            break (app, motion, FrontendParams { appearance: pa, motion: Some(pm) });
        }
    };
    let upstream: Array3<f64> = uniform((h, w, 2 * c), -1.0, 1.0, rng);
    let (_, cache) = two_stream_forward(app.view(), motion.view(), &params).unwrap();
    let (g, gapp, gmot) = two_stream_backward(&cache, &params, upstream.view()).unwrap();
    let gm = g.motion.unwrap();

    let mut packer = Packer::new();
    let mut point = Vec::new();
    let m = params.motion.as_ref().unwrap();
    for a in [params.appearance.weight.clone().into_dyn(), params.appearance.bias.clone().into_dyn(), m.weight.clone().into_dyn(), m.bias.clone().into_dyn(), app.into_dyn(), motion.into_dyn()] {
        packer.push(&mut point, &a);
    }
    let mut analytic = Vec::new();
    for a in [g.appearance.weight.into_dyn(), g.appearance.bias.into_dyn(), gm.weight.into_dyn(), gm.bias.into_dyn(), gapp.into_dyn(), gmot.unwrap().into_dyn()] {
        analytic.extend(a.iter().copied());
    }
    let objective = Box::new(move |x: &[f64]| {
        let mut parts = packer.unpack(x).into_iter();
        let mut next = || parts.next().unwrap();
        let pa = stream_from(next(), next());
        let pm = stream_from(next(), next());
        let app: Array3<f64> = fix(next());
        let mot: Array3<f64> = fix(next());
        let p = FrontendParams { appearance: pa, motion: Some(pm) };
        let (fused, _) = two_stream_forward(app.view(), mot.view(), &p).unwrap();
        dot(&fused, &upstream)
    });
    Check { point, analytic, objective }
}

fn check_baseline(rng: &mut ChaCha8Rng) -> Check {
    let (h, w, cf, ka, kc) = (4, 4, 5, 3, 4);
    let fused: Array3<f64> = uniform((h, w, cf), -1.0, 1.0, rng);
    let mut params = BaselineParams::init(cf, ka, kc, rng);
    params.actor.bias = uniform(ka, -0.5, 0.5, rng);
    params.action.bias = uniform(kc, -0.5, 0.5, rng);
    let ua: Array3<f64> = uniform((h, w, ka), -1.0, 1.0, rng);
    let uc: Array3<f64> = uniform((h, w, kc), -1.0, 1.0, rng);
    let (g, gf) = baseline_backward(fused.view(), &params, ua.view(), uc.view()).unwrap();

    let mut packer = Packer::new();
    let mut point = Vec::new();
    for a in [params.actor.weight.into_dyn(), params.actor.bias.into_dyn(), params.action.weight.into_dyn(), params.action.bias.into_dyn(), fused.into_dyn()] {
        packer.push(&mut point, &a);
    }
    let mut analytic = Vec::new();
    for a in [g.actor.weight.into_dyn(), g.actor.bias.into_dyn(), g.action.weight.into_dyn(), g.action.bias.into_dyn(), gf.into_dyn()] {
        analytic.extend(a.iter().copied());
    }
    let objective = Box::new(move |x: &[f64]| {
        let mut parts = packer.unpack(x).into_iter();
        let mut next = || parts.next().unwrap();
        let mut p = BaselineParams::zeros(cf, ka, kc);
        p.actor.weight = fix(next());
        p.actor.bias = fix(next());
        p.action.weight = fix(next());
        p.action.bias = fix(next());
        let f: Array3<f64> = fix(next());
        let (sa, sc) = baseline_forward(f.view(), &p).unwrap();
        dot(&sa.values, &ua) + dot(&sc.values, &uc)
    });
    Check { point, analytic, objective }
}

fn check_roi_pool(rng: &mut ChaCha8Rng) -> Check {
    let (h, w, c, grid) = (6, 7, 2, 2);
    // Distinct values spaced well beyond the step keep every argmax stable.
    let n = h * w * c;
    let mut ranks: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ranks.swap(i, rng.random_range(0..=i));
    }
    let features = Array3::from_shape_vec((h, w, c), ranks.iter().map(|&r| r as f64 * 0.05 - 1.0).collect()).unwrap();
    let boxes = vec![BBox::new(0.3, 0.0, 4.6, 5.2), BBox::new(2.0, 1.5, 7.0, 6.0)];
    let upstream: Array4<f64> = uniform((boxes.len(), grid, grid, c), -1.0, 1.0, rng);
    let (_, wit) = roi_pool_forward(features.view(), &boxes, grid).unwrap();
    let analytic = roi_pool_backward(&wit, upstream.view()).unwrap().iter().copied().collect();
    let point = features.iter().copied().collect();
    let objective = Box::new(move |x: &[f64]| {
        let f = Array3::from_shape_vec((h, w, c), x.to_vec()).unwrap();
        let (pooled, _) = roi_pool_forward(f.view(), &boxes, grid).unwrap();
        dot(&pooled, &upstream)
    });
    Check { point, analytic, objective }
}

fn check_fc_head(rng: &mut ChaCha8Rng) -> Check {
    let shape = HeadShape { grid: 2, channels: 2, hidden_layers: 2, hidden_width: 5, actors: 3, actions: 4 };
    let n = 3;
    let (pooled, params) = loop {
        let pooled: Array4<f64> = uniform((n, 2, 2, 2), -1.0, 1.0, rng);
        let mut params = HeadParams::init(shape, rng);
        for l in params.layers_mut() {
            l.bias = uniform(l.outputs(), -0.3, 0.3, rng);
        }
        // every hidden pre-activation away from the ReLU kink
        let mut x = pooled.clone().into_shape_with_order((n, 8)).unwrap();
        let mut clear = true;
        for l in &params.hidden {
            let z = l.forward(x.view()).unwrap();
            clear &= z.iter().all(|v| v.abs() > TIE_MARGIN);
            x = z.mapv(|v| v.max(0.0));
        }
        if clear {
            break (pooled, params);
        }
    };
    let ua: Array2<f64> = uniform((n, 3), -1.0, 1.0, rng);
    let uc: Array2<f64> = uniform((n, 4), -1.0, 1.0, rng);
    let (_, cache) = head_forward(pooled.view(), &params).unwrap();
    let (g, gp) = head_backward(&cache, &params, ua.view(), uc.view()).unwrap();

    let mut packer = Packer::new();
    let mut point = Vec::new();
    for l in params.layers() {
        packer.push(&mut point, &l.weight);
        packer.push(&mut point, &l.bias);
    }
    packer.push(&mut point, &pooled);
    let mut analytic = Vec::new();
    for l in g.layers() {
        analytic.extend(l.weight.iter().chain(l.bias.iter()).copied());
    }
    analytic.extend(gp.iter().copied());
    let objective = Box::new(move |x: &[f64]| {
        let mut parts = packer.unpack(x).into_iter();
        let mut p = HeadParams::zeros(shape);
        for l in p.layers_mut() {
            l.weight = fix(parts.next().unwrap());
            l.bias = fix(parts.next().unwrap());
        }
        let pooled: Array4<f64> = fix(parts.next().unwrap());
        let (s, _) = head_forward(pooled.view(), &p).unwrap();
        dot(&s.actor, &ua) + dot(&s.action, &uc)
    });
    Check { point, analytic, objective }
}

/// Random regions with soft masks on a small frame.
pub fn random_regions(rng: &mut impl Rng, width: usize, height: usize, count: usize) -> RegionSet {
    let regions = (0..count)
        .map(|_| {
            let x0 = rng.random_range(-1.0..width as f64 - 1.0);
            let y0 = rng.random_range(-1.0..height as f64 - 1.0);
            let x1 = x0 + rng.random_range(1.0..width as f64);
            let y1 = y0 + rng.random_range(1.0..height as f64);
            let (hb, wb) = (rng.random_range(1..5), rng.random_range(1..5));
            let data = (0..hb * wb)
                .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.2f32..=1.0) })
                .collect();
            RegionMask::new(BBox::new(x0, y0, x1, y1), Tensor::new(vec![hb, wb], data).unwrap()).unwrap()
        })
        .collect();
    RegionSet::new(regions, width, height)
}

/// Smallest gap between the winning candidate and the runner-up over all
/// pixels and classes.
pub fn fusion_margin(regions: &RegionSet, scores: &Array2<f64>, background: &Array1<f64>) -> f64 {
    let (w, h) = (regions.frame_width, regions.frame_height);
    let k = background.len();
    let mut cands: Vec<Vec<f64>> = vec![Vec::new(); w * h * k];
    for (j, cs) in cands.iter_mut().enumerate() {
        cs.push(background[j % k]);
    }
    for (i, r) in regions.iter().enumerate() {
        for (p, m) in r.rasterize(w, h) {
            for c in 0..k {
                cands[p * k + c].push(m * scores[[i, c]]);
            }
        }
    }
    cands
        .into_iter()
        .map(|mut cs| {
            cs.sort_by(|a, b| b.total_cmp(a));
            if cs.len() < 2 {
                f64::INFINITY
            } else {
                cs[0] - cs[1]
            }
        })
        .fold(f64::INFINITY, f64::min)
}

fn check_region_to_pixel(rng: &mut ChaCha8Rng) -> Check {
    let (w, h, n, k) = (6, 5, 3, 4);
    let (regions, scores, bg) = loop {
        let regions = random_regions(rng, w, h, n);
        let scores: Array2<f64> = uniform((n, k), -2.0, 2.0, rng);
        let bg: Array1<f64> = uniform(k, -1.0, 1.0, rng);
        if fusion_margin(&regions, &scores, &bg) > 2.0 * TIE_MARGIN {
            break (regions, scores, bg);
        }
    };
    let upstream: Array3<f64> = uniform((h, w, k), -1.0, 1.0, rng);
    let (_, wit) = region_to_pixel_forward(&regions, scores.view(), bg.view()).unwrap();
    let (gs, gb) = region_to_pixel_backward(&wit, &regions, upstream.view()).unwrap();
    let point: Vec<f64> = scores.iter().chain(bg.iter()).copied().collect();
    let analytic: Vec<f64> = gs.iter().chain(gb.iter()).copied().collect();
    let objective = Box::new(move |x: &[f64]| {
        let s = Array2::from_shape_vec((n, k), x[..n * k].to_vec()).unwrap();
        let b = Array1::from_vec(x[n * k..].to_vec());
        let (y, _) = region_to_pixel_forward(&regions, s.view(), b.view()).unwrap();
        dot(&y.values, &upstream)
    });
    Check { point, analytic, objective }
}

fn check_softmax(rng: &mut ChaCha8Rng) -> Check {
    let dims = (3, 3, 4);
    let scores: Array3<f64> = uniform(dims, -3.0, 3.0, rng);
    let upstream: Array3<f64> = uniform(dims, -1.0, 1.0, rng);
    let p = softmax_pixelwise(&ScoreMap::new(scores.clone()));
    let analytic = softmax_backward(&p, upstream.view()).unwrap().iter().copied().collect();
    let point = scores.iter().copied().collect();
    let objective = Box::new(move |x: &[f64]| {
        let s = Array3::from_shape_vec(dims, x.to_vec()).unwrap();
        dot(&softmax_pixelwise(&ScoreMap::new(s)).values, &upstream)
    });
    Check { point, analytic, objective }
}

fn check_loss(rng: &mut ChaCha8Rng) -> Check {
    let (h, w, ka, kc) = (3, 4, 3, 5);
    let sa: Array3<f64> = uniform((h, w, ka), -2.0, 2.0, rng);
    let sc: Array3<f64> = uniform((h, w, kc), -2.0, 2.0, rng);
    let ga = LabelMap::new(Array2::from_shape_simple_fn((h, w), || rng.random_range(0..ka as u16)));
    let gc = LabelMap::new(Array2::from_shape_simple_fn((h, w), || rng.random_range(0..kc as u16)));
    let out = actor_action_loss(
        &softmax_pixelwise(&ScoreMap::new(sa.clone())),
        &softmax_pixelwise(&ScoreMap::new(sc.clone())),
        &ga,
        &gc,
    )
    .unwrap();
    let point: Vec<f64> = sa.iter().chain(sc.iter()).copied().collect();
    let analytic: Vec<f64> = out.grad_actor.iter().chain(out.grad_action.iter()).copied().collect();
    let split = h * w * ka;
    let objective = Box::new(move |x: &[f64]| {
        let a = Array3::from_shape_vec((h, w, ka), x[..split].to_vec()).unwrap();
        let c = Array3::from_shape_vec((h, w, kc), x[split..].to_vec()).unwrap();
        actor_action_loss(
            &softmax_pixelwise(&ScoreMap::new(a)),
            &softmax_pixelwise(&ScoreMap::new(c)),
            &ga,
            &gc,
        )
        .unwrap()
        .loss
    });
    Check { point, analytic, objective }
}
