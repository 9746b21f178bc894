//! Multi-task cross-entropy loss, SGD and the two-stage training schedule.
//!
//! Stage 1 trains the front-end together with the per-pixel baseline head,
//! using separate learning rates for the two. Stage 2 freezes both and
//! trains the region head and the background score vectors through ROI
//! pooling, the FC head, region-to-pixel fusion and softmax.

use std::fmt::Write as _;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FrameSample, LabelMap};
use crate::frontend::{baseline_backward, baseline_forward, two_stream_backward, two_stream_forward};
use crate::fusion::{region_to_pixel_backward, region_to_pixel_forward, softmax_pixelwise, ProbMap};
use crate::model::{ModelConfig, ModelParams, ParamGroup};
use crate::region::RegionSet;
use crate::regionhead::{head_backward, head_forward, roi_pool_backward, roi_pool_forward};
use crate::taxonomy::Taxonomy;

/// Lower clamp applied to probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub actor_term: f64,
    pub action_term: f64,
    /// Gradient w.r.t. the pre-softmax actor scores.
    pub grad_actor: Array3<f64>,
    /// Gradient w.r.t. the pre-softmax action scores.
    pub grad_action: Array3<f64>,
}

/// Mean over evaluated pixels of `-log p_actor(gt) - log p_action(gt)`.
///
/// A pixel is evaluated unless either ground-truth map ignores it. The
/// returned gradients are taken w.r.t. the scores feeding the softmax,
/// i.e. `(p - onehot) / n`.
pub fn actor_action_loss(
    p_actor: &ProbMap,
    p_action: &ProbMap,
    gt_actor: &LabelMap,
    gt_action: &LabelMap,
) -> Result<LossOutput> {
    let (h, w, ka) = p_actor.values.dim();
    let (h2, w2, kc) = p_action.values.dim();
    if (h, w) != (h2, w2) || gt_actor.dim() != (h, w) || gt_action.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "loss inputs disagree: probs {h}x{w}/{h2}x{w2}, labels {:?}/{:?}",
            gt_actor.dim(),
            gt_action.dim()
        )));
    }
    let mut grad_actor = p_actor.values.clone();
    let mut grad_action = p_action.values.clone();
    let mut n = 0usize;
    let (mut actor_sum, mut action_sum) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if gt_actor.is_ignored(y, x) || gt_action.is_ignored(y, x) {
                grad_actor.slice_mut(ndarray::s![y, x, ..]).fill(0.0);
                grad_action.slice_mut(ndarray::s![y, x, ..]).fill(0.0);
                continue;
            }
            let (a, c) = (usize::from(gt_actor.labels[[y, x]]), usize::from(gt_action.labels[[y, x]]));
            if a >= ka || c >= kc {
                return Err(Error::OutOfRange(format!("label ({a}, {c}) at [{y}, {x}]")));
            }
            actor_sum -= p_actor.values[[y, x, a]].max(LOG_CLAMP).ln();
            action_sum -= p_action.values[[y, x, c]].max(LOG_CLAMP).ln();
            grad_actor[[y, x, a]] -= 1.0;
            grad_action[[y, x, c]] -= 1.0;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::AllIgnored);
    }
    let inv = 1.0 / n as f64;
    grad_actor.mapv_inplace(|v| v * inv);
    grad_action.mapv_inplace(|v| v * inv);
    let actor_term = actor_sum * inv;
    let action_term = action_sum * inv;
    Ok(LossOutput {
        loss: actor_term + action_term,
        actor_term,
        action_term,
        grad_actor,
        grad_action,
    })
}

/// Per-group learning rates. A rate of zero freezes the group.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LearningRates {
    pub frontend: f64,
    pub baseline: f64,
    pub head: f64,
    pub background: f64,
}

impl LearningRates {
    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Frontend => self.frontend,
            ParamGroup::Baseline => self.baseline,
            ParamGroup::Head => self.head,
            ParamGroup::Background => self.background,
        }
    }
}

/// SGD with optional momentum and weight decay (both zero by default).
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    /// Applies `p <- p - lr(group) * g` (plus momentum/decay when set) to
    /// every group with a nonzero learning rate. Gradients are checked for
    /// finiteness before anything is modified.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lrs: &LearningRates) -> Result<()> {
        let grad_tensors = grads.tensors();
        let param_count = params.tensors().len();
        if grad_tensors.len() != param_count {
            return Err(Error::ShapeMismatch("gradient layout differs from parameters".into()));
        }
        for (name, _, g) in &grad_tensors {
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { name: name.clone(), index });
            }
        }
        let plain = self.momentum == 0.0 && self.weight_decay == 0.0;
        if !plain && self.velocity.is_none() {
            self.velocity = Some(vec![0.0; params.num_values()]);
        }
        let mut offset = 0;
        for ((_, group, mut p), (_, _, g)) in params.tensors_mut().into_iter().zip(grad_tensors) {
            let len = p.len();
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch("gradient tensor shape differs".into()));
            }
            let lr = lrs.get(group);
            if lr != 0.0 {
                if plain {
                    p.zip_mut_with(&g, |p, &g| *p -= lr * g);
                } else {
                    let v = &mut self.velocity.as_mut().expect("allocated")[offset..offset + len];
                    for ((p, &g), v) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        *v = self.momentum * *v + g + self.weight_decay * *p;
                        *p -= lr * *v;
                    }
                }
            }
            offset += len;
        }
        Ok(())
    }
}

/// Plain SGD step, no momentum or weight decay.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, lrs: &LearningRates) -> Result<()> {
    Sgd::default().step(params, grads, lrs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset_name: String,
    pub stage1_lr_frontend: f64,
    pub stage1_lr_backend: f64,
    pub stage1_batch: usize,
    pub stage1_iters: usize,
    pub stage2_lr: f64,
    pub stage2_batch: usize,
    pub stage2_iters: usize,
    pub seed: u64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl TrainConfig {
    /// The published schedule: 20000 stage-1 iterations at batch 10 with
    /// front-end/back-end rates 2.5e-4/5e-3, then 80000 stage-2 iterations
    /// at batch 1 with rate 2.5e-4.
    pub fn paper(seed: u64) -> Self {
        Self {
            preset_name: "paper".into(),
            stage1_lr_frontend: 2.5e-4,
            stage1_lr_backend: 5e-3,
            stage1_batch: 10,
            stage1_iters: 20000,
            stage2_lr: 2.5e-4,
            stage2_batch: 1,
            stage2_iters: 80000,
            seed,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    /// Desk-scale schedule for training from scratch on synthetic scenes.
    pub fn toy(seed: u64) -> Self {
        Self {
            preset_name: "toy".into(),
            stage1_lr_frontend: 0.1,
            stage1_lr_backend: 0.1,
            stage1_batch: 4,
            stage1_iters: 2000,
            stage2_lr: 0.02,
            stage2_batch: 1,
            stage2_iters: 4000,
            seed,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper(seed)),
            "toy" => Some(Self::toy(seed)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.stage1_lr_frontend, self.stage1_lr_backend, self.stage2_lr];
        if rates.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        let counts = [self.stage1_batch, self.stage1_iters, self.stage2_batch, self.stage2_iters];
        if counts.contains(&0) {
            return Err(Error::InvalidArgument("batch sizes and iteration counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub stage: u8,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

/// Decimal rendering with 9 significant digits.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

impl TrainingLog {
    pub const HEADER: &'static str = "iteration,stage,loss";

    pub fn stage(&self, stage: u8) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    /// Records as `iteration,stage,loss` lines, without the header.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            writeln!(s, "{},{},{}", r.iteration, r.stage, format_significant(r.loss, 9)).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty() && *l != Self::HEADER) {
            let bad = || Error::InvalidArgument(format!("malformed log line: {line}"));
            let mut parts = line.split(',');
            let iteration = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let stage = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let loss = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            records.push(LogRecord { iteration, stage, loss });
        }
        Ok(Self { records })
    }
}

/// Frame inputs widened to `f64` once.
struct PreparedFrame<'a> {
    appearance: Array3<f64>,
    motion: Array3<f64>,
    sample: &'a FrameSample,
}

fn prepare(dataset: &[FrameSample]) -> Result<Vec<PreparedFrame<'_>>> {
    dataset
        .iter()
        .map(|s| {
            Ok(PreparedFrame {
                appearance: s.appearance.to_f64_3()?,
                motion: s.motion.to_f64_3()?,
                sample: s,
            })
        })
        .collect()
}

/// Loss and gradients of the stage-1 objective on one frame.
pub fn baseline_frame_gradients(
    params: &ModelParams,
    appearance: &Array3<f64>,
    motion: &Array3<f64>,
    gt_actor: &LabelMap,
    gt_action: &LabelMap,
    grads: &mut ModelParams,
) -> Result<f64> {
    let (fused, cache) = two_stream_forward(appearance.view(), motion.view(), &params.frontend)?;
    let (sa, sc) = baseline_forward(fused.view(), &params.baseline)?;
    let out = actor_action_loss(&softmax_pixelwise(&sa), &softmax_pixelwise(&sc), gt_actor, gt_action)?;
    let (gb, gfused) = baseline_backward(fused.view(), &params.baseline, out.grad_actor.view(), out.grad_action.view())?;
    let (gf, _, _) = two_stream_backward(&cache, &params.frontend, gfused.view())?;
    add_into(&mut grads.baseline.actor.weight, &gb.actor.weight);
    add_into(&mut grads.baseline.actor.bias, &gb.actor.bias);
    add_into(&mut grads.baseline.action.weight, &gb.action.weight);
    add_into(&mut grads.baseline.action.bias, &gb.action.bias);
    add_into(&mut grads.frontend.appearance.weight, &gf.appearance.weight);
    add_into(&mut grads.frontend.appearance.bias, &gf.appearance.bias);
    if let (Some(dst), Some(src)) = (&mut grads.frontend.motion, &gf.motion) {
        add_into(&mut dst.weight, &src.weight);
        add_into(&mut dst.bias, &src.bias);
    }
    Ok(out.loss)
}

/// Loss and gradients of the stage-2 (region path) objective on one frame,
/// given fixed front-end features. Returns the loss and the gradient w.r.t.
/// the fused features.
pub fn region_frame_gradients(
    params: &ModelParams,
    fused: &Array3<f64>,
    regions: &RegionSet,
    gt_actor: &LabelMap,
    gt_action: &LabelMap,
    grads: &mut ModelParams,
) -> Result<(f64, Array3<f64>)> {
    let grid = params.head.grid;
    let boxes = regions.boxes();
    let (pooled, rw) = roi_pool_forward(fused.view(), &boxes, grid)?;
    let (scores, hc) = head_forward(pooled.view(), &params.head)?;
    let (ya, wa) = region_to_pixel_forward(regions, scores.actor.view(), params.background_actor.view())?;
    let (yc, wc) = region_to_pixel_forward(regions, scores.action.view(), params.background_action.view())?;
    let out = actor_action_loss(&softmax_pixelwise(&ya), &softmax_pixelwise(&yc), gt_actor, gt_action)?;
    let (gsa, gba) = region_to_pixel_backward(&wa, regions, out.grad_actor.view())?;
    let (gsc, gbc) = region_to_pixel_backward(&wc, regions, out.grad_action.view())?;
    let (gh, gpooled) = head_backward(&hc, &params.head, gsa.view(), gsc.view())?;
    for (dst, src) in grads.head.layers_mut().zip(gh.layers()) {
        add_into(&mut dst.weight, &src.weight);
        add_into(&mut dst.bias, &src.bias);
    }
    add_into(&mut grads.background_actor, &gba);
    add_into(&mut grads.background_action, &gbc);
    let gfused = if boxes.is_empty() {
        Array3::zeros(fused.dim())
    } else {
        roi_pool_backward(&rw, gpooled.view())?
    };
    Ok((out.loss, gfused))
}

fn add_into<D: ndarray::Dimension>(dst: &mut ndarray::Array<f64, D>, src: &ndarray::Array<f64, D>) {
    *dst += src;
}

fn scale(grads: &mut ModelParams, factor: f64) {
    for (_, _, mut t) in grads.tensors_mut() {
        t.mapv_inplace(|v| v * factor);
    }
}

fn stage_rng(seed: u64, stage: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(stage));
    rng
}

fn check_dataset(dataset: &[FrameSample], config: &ModelConfig, taxonomy: &Taxonomy) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one frame".into()));
    }
    if config.actors != taxonomy.num_actors() || config.actions != taxonomy.num_actions() {
        return Err(Error::ShapeMismatch("model classes disagree with the taxonomy".into()));
    }
    Ok(())
}

/// Stage 1: front-end and baseline head, trained jointly.
pub fn train_stage1(
    params: &mut ModelParams,
    dataset: &[FrameSample],
    taxonomy: &Taxonomy,
    model: &ModelConfig,
    config: &TrainConfig,
    log: &mut TrainingLog,
) -> Result<()> {
    config.validate()?;
    check_dataset(dataset, model, taxonomy)?;
    let frames = prepare(dataset)?;
    let mut rng = stage_rng(config.seed, 1);
    let mut sgd = Sgd::new(config.momentum, config.weight_decay);
    let lrs = LearningRates {
        frontend: config.stage1_lr_frontend,
        baseline: config.stage1_lr_backend,
        ..Default::default()
    };
    for iteration in 1..=config.stage1_iters {
        let mut grads = ModelParams::zeros(model);
        let mut loss = 0.0;
        for _ in 0..config.stage1_batch {
            let f = &frames[rng.random_range(0..frames.len())];
            loss += baseline_frame_gradients(
                params,
                &f.appearance,
                &f.motion,
                &f.sample.gt_actor,
                &f.sample.gt_action,
                &mut grads,
            )?;
        }
        let inv = 1.0 / config.stage1_batch as f64;
        scale(&mut grads, inv);
        sgd.step(params, &grads, &lrs)?;
        log.records.push(LogRecord { iteration, stage: 1, loss: loss * inv });
    }
    Ok(())
}

/// Stage 2: region head and background scores on frozen front-end features.
pub fn train_stage2(
    params: &mut ModelParams,
    dataset: &[FrameSample],
    taxonomy: &Taxonomy,
    model: &ModelConfig,
    config: &TrainConfig,
    log: &mut TrainingLog,
) -> Result<()> {
    config.validate()?;
    check_dataset(dataset, model, taxonomy)?;
    let frames = prepare(dataset)?;
    let mut features: Vec<Option<Array3<f64>>> = vec![None; frames.len()];
    let mut rng = stage_rng(config.seed, 2);
    let mut sgd = Sgd::new(config.momentum, config.weight_decay);
    let lrs = LearningRates {
        head: config.stage2_lr,
        background: config.stage2_lr,
        ..Default::default()
    };
    for iteration in 1..=config.stage2_iters {
        let mut grads = ModelParams::zeros(model);
        let mut loss = 0.0;
        for _ in 0..config.stage2_batch {
            let idx = rng.random_range(0..frames.len());
            let f = &frames[idx];
            if features[idx].is_none() {
                let (fused, _) = two_stream_forward(f.appearance.view(), f.motion.view(), &params.frontend)?;
                features[idx] = Some(fused);
            }
            let fused = features[idx].as_ref().expect("filled above");
            let s = f.sample;
            loss += region_frame_gradients(params, fused, &s.regions, &s.gt_actor, &s.gt_action, &mut grads)?.0;
        }
        let inv = 1.0 / config.stage2_batch as f64;
        scale(&mut grads, inv);
        sgd.step(params, &grads, &lrs)?;
        log.records.push(LogRecord { iteration, stage: 2, loss: loss * inv });
    }
    Ok(())
}

/// Full schedule from a fresh initialization seeded with `config.seed`.
pub fn train_two_stage(
    dataset: &[FrameSample],
    taxonomy: &Taxonomy,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainingLog)> {
    model.validate()?;
    let mut params = ModelParams::init(model, config.seed);
    let mut log = TrainingLog::default();
    train_stage1(&mut params, dataset, taxonomy, model, config, &mut log)?;
    train_stage2(&mut params, dataset, taxonomy, model, config, &mut log)?;
    Ok((params, log))
}
