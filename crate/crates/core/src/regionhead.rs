//! Region classification path: max ROI pooling over each bounding box,
//! a stack of ReLU fully connected layers, and linear actor/action heads.

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion::RegionScores;
use crate::layers::Dense;
use crate::region::BBox;

/// Argmax positions of a pooling call, one flat feature offset per output.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiWitness {
    input_dim: (usize, usize, usize),
    grid: usize,
    num_boxes: usize,
    argmax: Vec<usize>,
}

/// Integer pixel bounds `[start, end)` of a box after clamping to the frame:
/// floor for the start, ceil for the end.
pub fn quantize_box(bbox: &BBox, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let span = |lo: f64, hi: f64, limit: usize| {
        let s = lo.floor().clamp(0.0, limit as f64) as usize;
        let e = hi.ceil().clamp(0.0, limit as f64) as usize;
        (e > s).then_some((s, e))
    };
    let (xs, xe) = span(bbox.x0, bbox.x1, width)?;
    let (ys, ye) = span(bbox.y0, bbox.y1, height)?;
    Some((xs, ys, xe, ye))
}

/// Cell `i` of a `grid`-way split of `len` pixels: `[floor(i*len/G), ceil((i+1)*len/G))`.
/// Never empty, even when `len < grid`.
fn cell_span(i: usize, len: usize, grid: usize) -> (usize, usize) {
    (i * len / grid, ((i + 1) * len).div_ceil(grid))
}

pub fn roi_pool_forward(
    features: ArrayView3<f64>,
    boxes: &[BBox],
    grid: usize,
) -> Result<(Array4<f64>, RoiWitness)> {
    if grid == 0 {
        return Err(Error::InvalidArgument("pooling grid must be positive".into()));
    }
    let (h, w, c) = features.dim();
    let n = boxes.len();
    let mut out = Array4::zeros((n, grid, grid, c));
    let mut argmax = Vec::with_capacity(n * grid * grid * c);
    let data = features
        .as_slice()
        .map(std::borrow::Cow::Borrowed)
        .unwrap_or_else(|| std::borrow::Cow::Owned(features.iter().copied().collect()));

    for (b, bbox) in boxes.iter().enumerate() {
        if !bbox.is_well_formed() {
            return Err(Error::DegenerateBox {
                index: b,
                reason: "requires x0 < x1 and y0 < y1".into(),
            });
        }
        let (xs, ys, xe, ye) = quantize_box(bbox, w, h).ok_or_else(|| Error::DegenerateBox {
            index: b,
            reason: "empty after clamping to the frame".into(),
        })?;
        for gy in 0..grid {
            let (cy0, cy1) = cell_span(gy, ye - ys, grid);
            for gx in 0..grid {
                let (cx0, cx1) = cell_span(gx, xe - xs, grid);
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_off = 0;
                    for y in ys + cy0..ys + cy1 {
                        for x in xs + cx0..xs + cx1 {
                            let off = (y * w + x) * c + ch;
                            if data[off] > best {
                                best = data[off];
                                best_off = off;
                            }
                        }
                    }
                    out[[b, gy, gx, ch]] = best;
                    argmax.push(best_off);
                }
            }
        }
    }
    let witness = RoiWitness {
        input_dim: (h, w, c),
        grid,
        num_boxes: n,
        argmax,
    };
    Ok((out, witness))
}

/// Routes each upstream value to its argmax feature position; overlapping
/// boxes accumulate in box order.
pub fn roi_pool_backward(witness: &RoiWitness, upstream: ArrayView4<f64>) -> Result<Array3<f64>> {
    let (h, w, c) = witness.input_dim;
    let g = witness.grid;
    if upstream.dim() != (witness.num_boxes, g, g, c) {
        return Err(Error::ShapeMismatch(format!(
            "roi pool backward: upstream {:?}, expected {:?}",
            upstream.dim(),
            (witness.num_boxes, g, g, c)
        )));
    }
    let mut grad = vec![0.0; h * w * c];
    for (&off, &u) in witness.argmax.iter().zip(upstream.iter()) {
        grad[off] += u;
    }
    Ok(Array3::from_shape_vec((h, w, c), grad).expect("sized above"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadShape {
    pub grid: usize,
    pub channels: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub actors: usize,
    pub actions: usize,
}

impl HeadShape {
    pub fn input_width(&self) -> usize {
        self.grid * self.grid * self.channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub grid: usize,
    pub hidden: Vec<Dense>,
    pub actor: Dense,
    pub action: Dense,
}

impl HeadParams {
    fn build(shape: HeadShape, mut make: impl FnMut(usize, usize) -> Dense) -> Self {
        let mut width = shape.input_width();
        let mut hidden = Vec::with_capacity(shape.hidden_layers);
        for _ in 0..shape.hidden_layers {
            hidden.push(make(width, shape.hidden_width));
            width = shape.hidden_width;
        }
        let actor = make(width, shape.actors);
        let action = make(width, shape.actions);
        Self {
            grid: shape.grid,
            hidden,
            actor,
            action,
        }
    }

    pub fn zeros(shape: HeadShape) -> Self {
        Self::build(shape, Dense::zeros)
    }

    pub fn init<R: Rng>(shape: HeadShape, rng: &mut R) -> Self {
        Self::build(shape, |i, o| Dense::init(i, o, rng))
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain([&self.actor, &self.action])
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden.iter_mut().chain([&mut self.actor, &mut self.action])
    }
}

/// Activations kept for [`head_backward`].
#[derive(Clone, Debug)]
pub struct HeadCache {
    pooled_dim: (usize, usize, usize, usize),
    // activations[0] is the flattened input; activations[l + 1] the output
    // of hidden layer l after ReLU.
    activations: Vec<Array2<f64>>,
}

pub fn head_forward(pooled: ArrayView4<f64>, params: &HeadParams) -> Result<(RegionScores, HeadCache)> {
    let dim = pooled.dim();
    let (n, g1, g2, c) = dim;
    if g1 != params.grid || g2 != params.grid {
        return Err(Error::ShapeMismatch(format!(
            "pooled grid {g1}x{g2}, head expects {}",
            params.grid
        )));
    }
    let flat = pooled
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, g1 * g2 * c))
        .expect("contiguous");
    let mut activations = vec![flat];
    for layer in &params.hidden {
        let mut z = layer.forward(activations.last().unwrap().view())?;
        z.mapv_inplace(|v| v.max(0.0));
        activations.push(z);
    }
    let top = activations.last().unwrap().view();
    let scores = RegionScores {
        actor: params.actor.forward(top)?,
        action: params.action.forward(top)?,
    };
    Ok((
        scores,
        HeadCache {
            pooled_dim: dim,
            activations,
        },
    ))
}

/// Returns `(parameter gradients, grad_pooled)`.
pub fn head_backward(
    cache: &HeadCache,
    params: &HeadParams,
    grad_actor: ArrayView2<f64>,
    grad_action: ArrayView2<f64>,
) -> Result<(HeadParams, Array4<f64>)> {
    let n = cache.pooled_dim.0;
    if grad_actor.dim() != (n, params.actor.outputs()) || grad_action.dim() != (n, params.action.outputs()) {
        return Err(Error::ShapeMismatch(format!(
            "head backward: upstream {:?}/{:?} for {n} regions",
            grad_actor.dim(),
            grad_action.dim()
        )));
    }
    let top = cache.activations.last().unwrap().view();
    let (g_actor, dx_a) = params.actor.backward(top, grad_actor);
    let (g_action, dx_c) = params.action.backward(top, grad_action);
    let mut upstream = dx_a + dx_c;

    let mut hidden_grads = Vec::with_capacity(params.hidden.len());
    for (l, layer) in params.hidden.iter().enumerate().rev() {
        let out = &cache.activations[l + 1];
        upstream.zip_mut_with(out, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        let (g_layer, dx) = layer.backward(cache.activations[l].view(), upstream.view());
        hidden_grads.push(g_layer);
        upstream = dx;
    }
    hidden_grads.reverse();
    let grads = HeadParams {
        grid: params.grid,
        hidden: hidden_grads,
        actor: g_actor,
        action: g_action,
    };
    let grad_pooled = upstream.as_standard_layout().into_owned().into_shape_with_order(cache.pooled_dim).expect("same size");
    Ok((grads, grad_pooled))
}
