use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use regionseg::fusion::region_to_pixel_forward;
use regionseg::gradcheck::gradient_suite;
use regionseg::metrics::{evaluate_all, EvalOptions, FrameLabels};
use regionseg::synthdata::{
    corrupt_masks, generate_dataset, read_dataset, read_f32_payload, read_predictions, read_regions, write_dataset,
    write_f32_payload, write_predictions, CorruptionSpec, Dataset, SceneSpec,
};
use regionseg::training::{train_stage1, train_stage2, TrainConfig, TrainingLog};
use regionseg::{validate_frame, HeadMode, Model, ModelConfig, ModelParams, StreamMode, Tensor};
use serde_json::json;

use crate::config::{write_json, ExperimentConfig, CONFIG_FILE};
use crate::{
    CorruptionLevel, EvaluateArgs, FuseArgs, GradcheckArgs, Head, PredictArgs, Stage, Streams, SynthArgs, TrainArgs,
};

pub const PARAMS_FILE: &str = "params.bin";
pub const LOG_FILE: &str = "train_log.csv";

/// A check ran to completion and failed; exits with status 1.
#[derive(Debug)]
pub struct VerificationFailed(pub String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let d = read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    for (i, f) in d.frames.iter().enumerate() {
        if let Some(v) = validate_frame(f, &d.taxonomy).first() {
            bail!("dataset {} frame {i}: {v}", path.display());
        }
    }
    Ok(d)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SceneSpec::default(),
    };
    let frames = generate_dataset(&spec, a.count, a.seed)?;
    let tax = spec.taxonomy.clone();
    let mut actors: BTreeMap<&str, usize> = BTreeMap::new();
    let mut actions: BTreeMap<&str, usize> = BTreeMap::new();
    let mut instances = 0;
    for f in &frames {
        for r in f.regions.iter() {
            let b = r.bbox();
            let (x, y) = (b.x0 as usize, b.y0 as usize);
            // a tight box's first row always holds a shape pixel
            let x = (x..f.width()).find(|&xx| r.mask_at_pixel(xx, y) > 0.0).unwrap_or(x);
            *actors.entry(&tax.actor_names()[f.gt_actor.labels[[y, x]] as usize]).or_default() += 1;
            *actions.entry(&tax.action_names()[f.gt_action.labels[[y, x]] as usize]).or_default() += 1;
            instances += 1;
        }
    }
    let hist = |m: &BTreeMap<&str, usize>| m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
    let summary = format!(
        "synth: {} frames, {instances} actors; actors: {}; actions: {}",
        a.count,
        hist(&actors),
        hist(&actions)
    );
    write_dataset(&Dataset { taxonomy: spec.taxonomy.clone(), frames }, &a.out)?;
    write_json(&a.out.join("synth_config.json"), &json!({ "count": a.count, "seed": a.seed, "spec": spec }))?;
    println!("{summary}");
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let mut c = ExperimentConfig::load(p)?;
            if let Some(d) = &a.dataset {
                c.dataset = d.clone();
            }
            if let Some(o) = &a.out {
                c.out = o.clone();
            }
            c
        }
        None => {
            let (Some(dataset), Some(out)) = (&a.dataset, &a.out) else {
                bail!("either --config or both --dataset and --out are required");
            };
            let d = read_dataset(dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
            let first = d.frames.first().context("dataset has no frames")?;
            let model = ModelConfig::new(first.appearance.shape()[2], first.motion.shape()[2], &d.taxonomy);
            let seed = a.seed.unwrap_or(0);
            let train = TrainConfig::preset(&a.preset, seed)
                .with_context(|| format!("unknown preset {:?} (expected toy or paper)", a.preset))?;
            ExperimentConfig {
                dataset: dataset.clone(),
                out: out.clone(),
                taxonomy: d.taxonomy,
                train,
                model,
                head: HeadMode::Region,
                corruption: CorruptionSpec::default(),
                non_boundary: false,
                radius: regionseg::metrics::DEFAULT_BAND_RADIUS,
                seed,
            }
        }
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    if let Some(s) = a.streams {
        cfg.model.streams = match s {
            Streams::RgbFlow => StreamMode::RgbFlow,
            Streams::RgbOnly => StreamMode::RgbOnly,
        };
    }
    let m = &mut cfg.model;
    m.feature_width = a.feature_width.unwrap_or(m.feature_width);
    m.grid = a.grid.unwrap_or(m.grid);
    m.hidden_layers = a.hidden_layers.unwrap_or(m.hidden_layers);
    m.hidden_width = a.hidden_width.unwrap_or(m.hidden_width);
    cfg.train.stage1_iters = a.stage1_iters.unwrap_or(cfg.train.stage1_iters);
    cfg.train.stage2_iters = a.stage2_iters.unwrap_or(cfg.train.stage2_iters);
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    match (a.stage, a.resume) {
        (Stage::Two, false) => bail!("--stage 2 needs --resume to load stage-1 parameters"),
        (Stage::One | Stage::All, true) => bail!("--resume only applies to --stage 2"),
        _ => {}
    }
    let cfg = resolve_train_config(a)?;
    let data = load_dataset(&cfg.dataset)?;
    ensure!(data.taxonomy == cfg.taxonomy, "dataset taxonomy differs from the config");
    let first = data.frames.first().context("dataset has no frames")?;
    ensure!(
        first.appearance.shape()[2] == cfg.model.appearance_channels
            && first.motion.shape()[2] == cfg.model.motion_channels,
        "dataset channels differ from the model config"
    );
    fs::create_dir_all(&cfg.out)?;
    let params_path = cfg.out.join(PARAMS_FILE);
    let log_path = cfg.out.join(LOG_FILE);
    let (mut params, mut log) = if a.resume {
        let prev = ExperimentConfig::load(&cfg.out.join(CONFIG_FILE))?;
        ensure!(prev.model == cfg.model, "model config differs from the run being resumed");
        let bytes = fs::read(&params_path).with_context(|| format!("reading {}", params_path.display()))?;
        let text = fs::read_to_string(&log_path).with_context(|| format!("reading {}", log_path.display()))?;
        (ModelParams::from_le_bytes(&cfg.model, &bytes)?, TrainingLog::parse(&text)?)
    } else {
        (ModelParams::init(&cfg.model, cfg.seed), TrainingLog::default())
    };
    if matches!(a.stage, Stage::One | Stage::All) {
        train_stage1(&mut params, &data.frames, &data.taxonomy, &cfg.model, &cfg.train, &mut log)?;
    }
    if matches!(a.stage, Stage::Two | Stage::All) {
        train_stage2(&mut params, &data.frames, &data.taxonomy, &cfg.model, &cfg.train, &mut log)?;
    }
    fs::write(&params_path, params.to_le_bytes())?;
    fs::write(&log_path, log.to_lines())?;
    cfg.save(&cfg.out)?;
    for stage in [1u8, 2] {
        if let Some(r) = log.stage(stage).last() {
            println!("stage {stage}: {} iterations, final loss {:.6}", r.iteration, r.loss);
        }
    }
    println!("wrote {}", params_path.display());
    Ok(())
}

fn corruption_spec(a: &PredictArgs) -> CorruptionSpec {
    let mut c = match a.corruption {
        CorruptionLevel::None => CorruptionSpec::default(),
        CorruptionLevel::Mild => CorruptionSpec::mild(a.corruption_seed),
        CorruptionLevel::Severe => CorruptionSpec::severe(a.corruption_seed),
    };
    c.seed = a.corruption_seed;
    c.jitter = a.jitter.unwrap_or(c.jitter);
    c.morph_radius = a.morph_radius.unwrap_or(c.morph_radius);
    c.drop_prob = a.drop_prob.unwrap_or(c.drop_prob);
    c.spurious_rate = a.spurious_rate.unwrap_or(c.spurious_rate);
    c.downsample = a.downsample.unwrap_or(c.downsample);
    c
}

/// Frame `i` corrupts with seed `base + i` so frames differ but the run
/// stays reproducible.
pub fn frame_corruption(spec: &CorruptionSpec, frame: usize) -> CorruptionSpec {
    CorruptionSpec { seed: spec.seed.wrapping_add(frame as u64), ..spec.clone() }
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let dir = a.params.parent().unwrap_or(Path::new("."));
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let bytes = fs::read(&a.params).with_context(|| format!("reading {}", a.params.display()))?;
    let model = Model::new(cfg.model, ModelParams::from_le_bytes(&cfg.model, &bytes)?);
    let data = load_dataset(&a.dataset)?;
    ensure!(data.taxonomy == cfg.taxonomy, "dataset taxonomy differs from the trained model");
    let mode = match a.mode {
        Head::Baseline => HeadMode::Baseline,
        Head::Region => HeadMode::Region,
    };
    let corruption = corruption_spec(a);
    let mut out = Vec::with_capacity(data.frames.len());
    for (i, f) in data.frames.iter().enumerate() {
        let regions = corrupt_masks(&f.regions, &frame_corruption(&corruption, i))?;
        let p = model.predict(f, mode, Some(&regions), &data.taxonomy)?;
        out.push(FrameLabels { actor: p.actor, action: p.action, joint: p.joint });
    }
    write_predictions(&out, &a.out)?;
    write_json(
        &a.out.join("predict_config.json"),
        &json!({
            "params": a.params,
            "dataset": a.dataset,
            "mode": mode,
            "corruption": corruption,
            "model": cfg.model,
        }),
    )?;
    println!("predict: {} frames ({:?} head) -> {}", out.len(), mode, a.out.display());
    Ok(())
}

pub fn fuse(a: &FuseArgs) -> Result<()> {
    ensure!(a.classes > 0, "--classes must be positive");
    let regions = read_regions(&a.regions)?;
    let n = regions.len();
    let scores = read_f32_payload(&a.scores, &[n + 1, a.classes])?;
    let all = scores.view2()?.mapv(f64::from);
    let bg = all.row(0).to_owned();
    let region_scores = all.slice(ndarray::s![1.., ..]).to_owned();
    let (fused, _) = region_to_pixel_forward(&regions, region_scores.view(), bg.view())?;
    fs::create_dir_all(&a.out)?;
    let tensor = Tensor::from_array3(&fused.values.mapv(|v| v as f32))?;
    write_f32_payload(&a.out.join("fused.f32"), &tensor)?;
    write_json(&a.out.join("fused.json"), &json!({ "file": "fused.f32", "shape": tensor.shape() }))?;
    write_json(
        &a.out.join("fuse_config.json"),
        &json!({ "scores": a.scores, "regions": a.regions, "classes": a.classes }),
    )?;
    println!("fuse: {n} regions -> {:?}", tensor.shape());
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let data = load_dataset(&a.dataset)?;
    let preds = read_predictions(&a.pred).with_context(|| format!("reading predictions {}", a.pred.display()))?;
    let gts = data
        .frames
        .iter()
        .map(|f| FrameLabels::ground_truth(f, &data.taxonomy))
        .collect::<regionseg::Result<Vec<_>>>()?;
    let options = EvalOptions { non_boundary: a.non_boundary, radius: a.radius };
    let report = evaluate_all(&preds, &gts, &data.taxonomy, &options)?;
    let out = a.out.as_deref().unwrap_or(&a.pred);
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.csv"), report.to_csv())?;
    fs::write(out.join("per_category.csv"), report.per_category_csv(&a.method))?;
    write_json(
        &out.join("evaluate_config.json"),
        &json!({
            "pred": a.pred,
            "dataset": a.dataset,
            "non_boundary": a.non_boundary,
            "radius": a.radius,
            "method": a.method,
        }),
    )?;
    if a.table {
        print!("{}", report.render_table(&a.method));
    } else {
        print!("{}", report.to_csv());
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let entries = gradient_suite(a.seed, a.inject_fault);
    println!("{:<20}{:>8}{:>14}  result", "operation", "params", "max_rel_err");
    for e in &entries {
        let verdict = if e.passed() { "pass" } else { "FAIL" };
        println!("{:<20}{:>8}{:>14.3e}  {verdict}", e.name, e.parameters, e.max_rel_error);
    }
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name).collect();
    if !failed.is_empty() {
        return Err(VerificationFailed(format!("gradcheck failed: {}", failed.join(", "))).into());
    }
    Ok(())
}
