//! Toy two-stream front-end and the per-pixel baseline head.
//!
//! Each stream is a single 3x3 convolution (stride 1, zero padding) with
//! ReLU. The appearance and motion features are concatenated along the
//! channel axis (early fusion). In RGB-only mode the motion stream is
//! absent and the fused width is `C` instead of `2C`.

use ndarray::{concatenate, s, Array1, Array3, Array4, ArrayView3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion::ScoreMap;
use crate::layers::{glorot_fill, Dense};

/// One 3x3 convolution, weights laid out `(C_out, C_in, 3, 3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamParams {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

impl StreamParams {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array4::zeros((outputs, inputs, 3, 3)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(inputs, outputs);
        glorot_fill(p.weight.iter_mut(), inputs * 9, outputs * 9, rng);
        p
    }

    pub fn inputs(&self) -> usize {
        self.weight.dim().1
    }

    pub fn outputs(&self) -> usize {
        self.weight.dim().0
    }

    // (ky, kx, i, o) ordering for the inner loops.
    fn taps(&self) -> Vec<f64> {
        let (co, ci, _, _) = self.weight.dim();
        let mut t = vec![0.0; 9 * ci * co];
        for ((o, i, ky, kx), &w) in self.weight.indexed_iter() {
            t[((ky * 3 + kx) * ci + i) * co + o] = w;
        }
        t
    }
}

/// Pre-activation 3x3 convolution; returns `(H, W, C_out)`.
pub(crate) fn conv3x3(input: ArrayView3<f64>, params: &StreamParams) -> Result<Array3<f64>> {
    let (h, w, ci) = input.dim();
    if ci != params.inputs() {
        return Err(Error::ShapeMismatch(format!(
            "stream expects {} input channels, got {ci}",
            params.inputs()
        )));
    }
    let co = params.outputs();
    let taps = params.taps();
    let inp: Vec<f64> = input.iter().copied().collect();
    let mut out = vec![0.0; h * w * co];
    for y in 0..h {
        for x in 0..w {
            let acc = &mut out[(y * w + x) * co..(y * w + x + 1) * co];
            acc.copy_from_slice(params.bias.as_slice().expect("contiguous"));
            for ky in 0..3 {
                let Some(sy) = (y + ky).checked_sub(1).filter(|&v| v < h) else { continue };
                for kx in 0..3 {
                    let Some(sx) = (x + kx).checked_sub(1).filter(|&v| v < w) else { continue };
                    let src = &inp[(sy * w + sx) * ci..(sy * w + sx + 1) * ci];
                    for (i, &v) in src.iter().enumerate() {
                        let wt = &taps[((ky * 3 + kx) * ci + i) * co..][..co];
                        for (a, &k) in acc.iter_mut().zip(wt) {
                            *a += v * k;
                        }
                    }
                }
            }
        }
    }
    Ok(Array3::from_shape_vec((h, w, co), out).expect("sized above"))
}

/// Gradients of a conv stream given the upstream gradient w.r.t. its
/// pre-activation output. Returns `(grad_params, grad_input)`.
fn conv3x3_backward(
    input: ArrayView3<f64>,
    params: &StreamParams,
    grad_pre: &Array3<f64>,
) -> (StreamParams, Array3<f64>) {
    let (h, w, ci) = input.dim();
    let co = params.outputs();
    let taps = params.taps();
    let inp: Vec<f64> = input.iter().copied().collect();
    let gp: Vec<f64> = grad_pre.iter().copied().collect();
    let mut gtaps = vec![0.0; taps.len()];
    let mut gin = vec![0.0; h * w * ci];
    let mut gbias = Array1::zeros(co);
    for y in 0..h {
        for x in 0..w {
            let g = &gp[(y * w + x) * co..(y * w + x + 1) * co];
            for (b, &v) in gbias.iter_mut().zip(g) {
                *b += v;
            }
            for ky in 0..3 {
                let Some(sy) = (y + ky).checked_sub(1).filter(|&v| v < h) else { continue };
                for kx in 0..3 {
                    let Some(sx) = (x + kx).checked_sub(1).filter(|&v| v < w) else { continue };
                    let base = (sy * w + sx) * ci;
                    for i in 0..ci {
                        let t = ((ky * 3 + kx) * ci + i) * co;
                        let v = inp[base + i];
                        let mut acc = 0.0;
                        for o in 0..co {
                            gtaps[t + o] += v * g[o];
                            acc += taps[t + o] * g[o];
                        }
                        gin[base + i] += acc;
                    }
                }
            }
        }
    }
    let mut weight = Array4::zeros(params.weight.dim());
    for ((o, i, ky, kx), wv) in weight.indexed_iter_mut() {
        *wv = gtaps[((ky * 3 + kx) * ci + i) * co + o];
    }
    (
        StreamParams { weight, bias: gbias },
        Array3::from_shape_vec((h, w, ci), gin).expect("sized above"),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendParams {
    pub appearance: StreamParams,
    /// `None` in RGB-only mode.
    pub motion: Option<StreamParams>,
}

impl FrontendParams {
    pub fn fused_width(&self) -> usize {
        self.appearance.outputs() + self.motion.as_ref().map_or(0, |m| m.outputs())
    }

    pub fn streams(&self) -> impl Iterator<Item = &StreamParams> {
        std::iter::once(&self.appearance).chain(self.motion.as_ref())
    }
}

#[derive(Clone, Debug)]
pub struct FrontendCache {
    appearance: Array3<f64>,
    motion: Option<Array3<f64>>,
    fused: Array3<f64>,
}

/// Runs both streams and concatenates their ReLU outputs along channels.
/// In RGB-only mode `motion` is ignored.
pub fn two_stream_forward(
    appearance: ArrayView3<f64>,
    motion: ArrayView3<f64>,
    params: &FrontendParams,
) -> Result<(Array3<f64>, FrontendCache)> {
    let relu = |mut a: Array3<f64>| {
        a.mapv_inplace(|v| v.max(0.0));
        a
    };
    let fa = relu(conv3x3(appearance, &params.appearance)?);
    let (fused, motion_in) = match &params.motion {
        Some(mp) => {
            let (ha, wa, _) = appearance.dim();
            let (hm, wm, _) = motion.dim();
            if (ha, wa) != (hm, wm) {
                return Err(Error::ShapeMismatch(format!(
                    "appearance {ha}x{wa} vs motion {hm}x{wm}"
                )));
            }
            let fm = relu(conv3x3(motion, mp)?);
            (
                concatenate(Axis(2), &[fa.view(), fm.view()]).expect("same spatial dims"),
                Some(motion.to_owned()),
            )
        }
        None => (fa, None),
    };
    let cache = FrontendCache {
        appearance: appearance.to_owned(),
        motion: motion_in,
        fused: fused.clone(),
    };
    Ok((fused, cache))
}

/// Returns parameter gradients and the gradients w.r.t. the appearance and
/// (when present) motion inputs.
pub fn two_stream_backward(
    cache: &FrontendCache,
    params: &FrontendParams,
    grad_fused: ArrayView3<f64>,
) -> Result<(FrontendParams, Array3<f64>, Option<Array3<f64>>)> {
    if grad_fused.dim() != cache.fused.dim() {
        return Err(Error::ShapeMismatch(format!(
            "front-end backward: upstream {:?}, fused {:?}",
            grad_fused.dim(),
            cache.fused.dim()
        )));
    }
    let mut g = grad_fused.to_owned();
    g.zip_mut_with(&cache.fused, |g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
    let ca = params.appearance.outputs();
    let ga = g.slice(s![.., .., ..ca]).to_owned();
    let (grad_app, d_app) = conv3x3_backward(cache.appearance.view(), &params.appearance, &ga);
    let (grad_motion, d_motion) = match (&params.motion, &cache.motion) {
        (Some(mp), Some(min)) => {
            let gm = g.slice(s![.., .., ca..]).to_owned();
            let (gp, d) = conv3x3_backward(min.view(), mp, &gm);
            (Some(gp), Some(d))
        }
        _ => (None, None),
    };
    Ok((
        FrontendParams {
            appearance: grad_app,
            motion: grad_motion,
        },
        d_app,
        d_motion,
    ))
}

/// Per-pixel linear classifiers on the fused features.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineParams {
    pub actor: Dense,
    pub action: Dense,
}

impl BaselineParams {
    pub fn zeros(fused: usize, actors: usize, actions: usize) -> Self {
        Self {
            actor: Dense::zeros(fused, actors),
            action: Dense::zeros(fused, actions),
        }
    }

    pub fn init<R: Rng>(fused: usize, actors: usize, actions: usize, rng: &mut R) -> Self {
        Self {
            actor: Dense::init(fused, actors, rng),
            action: Dense::init(fused, actions, rng),
        }
    }
}

fn flatten(a: ArrayView3<f64>) -> ndarray::Array2<f64> {
    let (h, w, c) = a.dim();
    a.as_standard_layout().into_owned().into_shape_with_order((h * w, c)).expect("contiguous")
}

pub fn baseline_forward(fused: ArrayView3<f64>, params: &BaselineParams) -> Result<(ScoreMap, ScoreMap)> {
    let (h, w, _) = fused.dim();
    let x = flatten(fused);
    let to_map = |a: ndarray::Array2<f64>| {
        let k = a.ncols();
        ScoreMap::new(a.into_shape_with_order((h, w, k)).expect("row count"))
    };
    Ok((to_map(params.actor.forward(x.view())?), to_map(params.action.forward(x.view())?)))
}

/// Returns `(grad_params, grad_fused)`.
pub fn baseline_backward(
    fused: ArrayView3<f64>,
    params: &BaselineParams,
    grad_actor: ArrayView3<f64>,
    grad_action: ArrayView3<f64>,
) -> Result<(BaselineParams, Array3<f64>)> {
    let (h, w, c) = fused.dim();
    if grad_actor.dim() != (h, w, params.actor.outputs()) || grad_action.dim() != (h, w, params.action.outputs()) {
        return Err(Error::ShapeMismatch(format!(
            "baseline backward: upstream {:?}/{:?} for {h}x{w}",
            grad_actor.dim(),
            grad_action.dim()
        )));
    }
    let x = flatten(fused);
    let (ga, dxa) = params.actor.backward(x.view(), flatten(grad_actor).view());
    let (gc, dxc) = params.action.backward(x.view(), flatten(grad_action).view());
    let dx = (dxa + dxc).into_shape_with_order((h, w, c)).expect("row count");
    Ok((BaselineParams { actor: ga, action: gc }, dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random3(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_fn((h, w, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_everything_gives_zero_features() {
        let p = FrontendParams {
            appearance: StreamParams::zeros(3, 4),
            motion: Some(StreamParams::zeros(2, 4)),
        };
        let (f, _) = two_stream_forward(
            Array3::zeros((5, 6, 3)).view(),
            Array3::zeros((5, 6, 2)).view(),
            &p,
        )
        .unwrap();
        assert_eq!(f.dim(), (5, 6, 8));
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_motion_leaves_only_bias_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut motion = StreamParams::init(2, 3, &mut rng);
        motion.bias = ndarray::array![0.5, -0.2, 1.0];
        let p = FrontendParams {
            appearance: StreamParams::init(3, 3, &mut rng),
            motion: Some(motion),
        };
        let app = random3(4, 4, 3, &mut rng);
        let (f, _) = two_stream_forward(app.view(), Array3::zeros((4, 4, 2)).view(), &p).unwrap();
        for lane in f.slice(s![.., .., 3..]).lanes(Axis(2)) {
            assert_eq!(lane.to_vec(), vec![0.5, 0.0, 1.0]);
        }
    }

    #[test]
    fn rgb_only_ignores_motion_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = FrontendParams {
            appearance: StreamParams::init(3, 4, &mut rng),
            motion: None,
        };
        let app = random3(4, 5, 3, &mut rng);
        let (a, _) = two_stream_forward(app.view(), random3(4, 5, 2, &mut rng).view(), &p).unwrap();
        let (b, _) = two_stream_forward(app.view(), random3(2, 2, 7, &mut rng).view(), &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim().2, 4);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = StreamParams::init(2, 3, &mut rng);
        p.bias = ndarray::array![0.1, -0.3, 0.2];
        let input = random3(4, 5, 2, &mut rng);
        let got = conv3x3(input.view(), &p).unwrap();
        for ((y, x, o), &v) in got.indexed_iter() {
            let mut want = p.bias[o];
            for i in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                        if sy >= 0 && sx >= 0 && sy < 4 && sx < 5 {
                            want += p.weight[[o, i, ky, kx]] * input[[sy as usize, sx as usize, i]];
                        }
                    }
                }
            }
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn baseline_is_per_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = BaselineParams::init(4, 3, 5, &mut rng);
        let mut f = random3(3, 3, 4, &mut rng);
        let row = f.slice(s![0, 0, ..]).to_owned();
        f.slice_mut(s![2, 1, ..]).assign(&row);
        let (a, c) = baseline_forward(f.view(), &p).unwrap();
        assert_eq!(a.values.slice(s![0, 0, ..]), a.values.slice(s![2, 1, ..]));
        assert_eq!(c.values.slice(s![0, 0, ..]), c.values.slice(s![2, 1, ..]));

        let z = BaselineParams::zeros(4, 3, 5);
        let (a, c) = baseline_forward(f.view(), &z).unwrap();
        assert!(a.values.iter().chain(c.values.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatches_error() {
        let p = FrontendParams {
            appearance: StreamParams::zeros(3, 2),
            motion: Some(StreamParams::zeros(2, 2)),
        };
        assert!(two_stream_forward(Array3::zeros((4, 4, 3)).view(), Array3::zeros((4, 5, 2)).view(), &p).is_err());
        assert!(two_stream_forward(Array3::zeros((4, 4, 1)).view(), Array3::zeros((4, 4, 2)).view(), &p).is_err());
        let b = BaselineParams::zeros(4, 2, 2);
        assert!(baseline_forward(Array3::zeros((2, 2, 3)).view(), &b).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert_eq, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn baseline_commutes_with_pixel_permutation(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = BaselineParams::init(3, 2, 4, &mut rng);
                let f = random3(3, 4, 3, &mut rng);
                let mut perm: Vec<usize> = (0..12).collect();
                for i in (1..12).rev() {
                    perm.swap(i, rng.random_range(0..=i));
                }
                let mut g = f.clone();
                for (dst, &src) in perm.iter().enumerate() {
                    g.slice_mut(s![dst / 4, dst % 4, ..]).assign(&f.slice(s![src / 4, src % 4, ..]));
                }
                let (a, _) = baseline_forward(f.view(), &p).unwrap();
                let (b, _) = baseline_forward(g.view(), &p).unwrap();
                for (dst, &src) in perm.iter().enumerate() {
                    prop_assert_eq!(
                        b.values.slice(s![dst / 4, dst % 4, ..]),
                        a.values.slice(s![src / 4, src % 4, ..])
                    );
                }
            }
        }
    }
}
