//! Model configuration, the full parameter set with its flat enumeration,
//! and the two inference paths (per-pixel baseline and region fusion).

use ndarray::{Array1, Array3, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FrameSample, LabelMap};
use crate::frontend::{baseline_forward, two_stream_forward, BaselineParams, FrontendParams, StreamParams};
use crate::fusion::{
    argmax_labeling, joint_labeling, joint_probability, region_to_pixel_forward, softmax_pixelwise, ProbMap,
    ScoreMap,
};
use crate::region::RegionSet;
use crate::regionhead::{head_forward, roi_pool_forward, HeadParams, HeadShape};
use crate::taxonomy::Taxonomy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamMode {
    RgbFlow,
    RgbOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    Baseline,
    Region,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub appearance_channels: usize,
    pub motion_channels: usize,
    /// Per-stream feature width `C`.
    pub feature_width: usize,
    /// ROI pooling grid `G`.
    pub grid: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub actors: usize,
    pub actions: usize,
    pub streams: StreamMode,
}

impl ModelConfig {
    /// Default architecture sizes: `C = 8`, `G = 7`, two hidden layers of 256.
    pub fn new(appearance_channels: usize, motion_channels: usize, taxonomy: &Taxonomy) -> Self {
        Self {
            appearance_channels,
            motion_channels,
            feature_width: 8,
            grid: 7,
            hidden_layers: 2,
            hidden_width: 256,
            actors: taxonomy.num_actors(),
            actions: taxonomy.num_actions(),
            streams: StreamMode::RgbFlow,
        }
    }

    pub fn fused_width(&self) -> usize {
        match self.streams {
            StreamMode::RgbFlow => 2 * self.feature_width,
            StreamMode::RgbOnly => self.feature_width,
        }
    }

    pub fn head_shape(&self) -> HeadShape {
        HeadShape {
            grid: self.grid,
            channels: self.fused_width(),
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            actors: self.actors,
            actions: self.actions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.appearance_channels,
            self.feature_width,
            self.grid,
            self.actors,
            self.actions,
        ];
        if dims.contains(&0) || (self.hidden_layers > 0 && self.hidden_width == 0) {
            return Err(Error::InvalidArgument(format!("model dimensions must be positive: {self:?}")));
        }
        if self.streams == StreamMode::RgbFlow && self.motion_channels == 0 {
            return Err(Error::InvalidArgument("rgb_flow mode needs motion channels".into()));
        }
        Ok(())
    }
}

/// Parameter groups, each trained with its own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Frontend,
    Baseline,
    Head,
    Background,
}

/// Starting value of every background score. Low enough that region scores
/// win inside masks at the start of training; a background score that
/// already beats a region for some class takes that class's whole
/// gradient, so the region could never learn it.
pub const BACKGROUND_INIT: f64 = -5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub frontend: FrontendParams,
    pub baseline: BaselineParams,
    pub head: HeadParams,
    pub background_actor: Array1<f64>,
    pub background_action: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config.feature_width;
        Self {
            frontend: FrontendParams {
                appearance: StreamParams::zeros(config.appearance_channels, c),
                motion: (config.streams == StreamMode::RgbFlow)
                    .then(|| StreamParams::zeros(config.motion_channels, c)),
            },
            baseline: BaselineParams::zeros(config.fused_width(), config.actors, config.actions),
            head: HeadParams::zeros(config.head_shape()),
            background_actor: Array1::zeros(config.actors),
            background_action: Array1::zeros(config.actions),
        }
    }

    /// Glorot-uniform weights from a generator seeded with `seed`; biases
    /// start at zero and background scores at [`BACKGROUND_INIT`].
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.feature_width;
        Self {
            frontend: FrontendParams {
                appearance: StreamParams::init(config.appearance_channels, c, &mut rng),
                motion: (config.streams == StreamMode::RgbFlow)
                    .then(|| StreamParams::init(config.motion_channels, c, &mut rng)),
            },
            baseline: BaselineParams::init(config.fused_width(), config.actors, config.actions, &mut rng),
            head: HeadParams::init(config.head_shape(), &mut rng),
            background_actor: Array1::from_elem(config.actors, BACKGROUND_INIT),
            background_action: Array1::from_elem(config.actions, BACKGROUND_INIT),
        }
    }

    /// Every parameter tensor in the fixed enumeration order.
    pub fn tensors(&self) -> Vec<(String, ParamGroup, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        let f = &self.frontend;
        out.push(("frontend.appearance.weight".into(), ParamGroup::Frontend, f.appearance.weight.view().into_dyn()));
        out.push(("frontend.appearance.bias".into(), ParamGroup::Frontend, f.appearance.bias.view().into_dyn()));
        if let Some(m) = &f.motion {
            out.push(("frontend.motion.weight".into(), ParamGroup::Frontend, m.weight.view().into_dyn()));
            out.push(("frontend.motion.bias".into(), ParamGroup::Frontend, m.bias.view().into_dyn()));
        }
        for (name, d) in [("actor", &self.baseline.actor), ("action", &self.baseline.action)] {
            out.push((format!("baseline.{name}.weight"), ParamGroup::Baseline, d.weight.view().into_dyn()));
            out.push((format!("baseline.{name}.bias"), ParamGroup::Baseline, d.bias.view().into_dyn()));
        }
        for (name, d) in head_layer_names(&self.head).into_iter().zip(self.head.layers()) {
            out.push((format!("head.{name}.weight"), ParamGroup::Head, d.weight.view().into_dyn()));
            out.push((format!("head.{name}.bias"), ParamGroup::Head, d.bias.view().into_dyn()));
        }
        out.push(("background.actor".into(), ParamGroup::Background, self.background_actor.view().into_dyn()));
        out.push(("background.action".into(), ParamGroup::Background, self.background_action.view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ParamGroup, ArrayViewMutD<'_, f64>)> {
        let names = head_layer_names(&self.head);
        let mut out = Vec::new();
        let f = &mut self.frontend;
        out.push(("frontend.appearance.weight".into(), ParamGroup::Frontend, f.appearance.weight.view_mut().into_dyn()));
        out.push(("frontend.appearance.bias".into(), ParamGroup::Frontend, f.appearance.bias.view_mut().into_dyn()));
        if let Some(m) = &mut f.motion {
            out.push(("frontend.motion.weight".into(), ParamGroup::Frontend, m.weight.view_mut().into_dyn()));
            out.push(("frontend.motion.bias".into(), ParamGroup::Frontend, m.bias.view_mut().into_dyn()));
        }
        for (name, d) in [("actor", &mut self.baseline.actor), ("action", &mut self.baseline.action)] {
            out.push((format!("baseline.{name}.weight"), ParamGroup::Baseline, d.weight.view_mut().into_dyn()));
            out.push((format!("baseline.{name}.bias"), ParamGroup::Baseline, d.bias.view_mut().into_dyn()));
        }
        for (name, d) in names.into_iter().zip(self.head.layers_mut()) {
            out.push((format!("head.{name}.weight"), ParamGroup::Head, d.weight.view_mut().into_dyn()));
            out.push((format!("head.{name}.bias"), ParamGroup::Head, d.bias.view_mut().into_dyn()));
        }
        out.push(("background.actor".into(), ParamGroup::Background, self.background_actor.view_mut().into_dyn()));
        out.push(("background.action".into(), ParamGroup::Background, self.background_action.view_mut().into_dyn()));
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for (_, _, t) in self.tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    pub fn from_flat(config: &ModelConfig, values: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(config);
        let expected = p.num_values();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "model needs {expected} parameters, got {}",
                values.len()
            )));
        }
        let mut it = values.iter();
        for (_, _, mut t) in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(p)
    }

    /// Little-endian `f64` encoding of the flat enumeration.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(config: &ModelConfig, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "parameter payload of {} bytes is not a whole number of f64 values",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_flat(config, &values)
    }
}

fn head_layer_names(head: &HeadParams) -> Vec<String> {
    (0..head.hidden.len())
        .map(|i| format!("hidden{i}"))
        .chain(["actor".to_string(), "action".to_string()])
        .collect()
}

/// Per-frame prediction: probabilities and labels for both tasks, plus the
/// joint labels as valid-pair indices.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub p_actor: ProbMap,
    pub p_action: ProbMap,
    pub actor: LabelMap,
    pub action: LabelMap,
    pub joint: LabelMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Self { config, params }
    }

    pub fn features(&self, frame: &FrameSample) -> Result<Array3<f64>> {
        let app = frame.appearance.to_f64_3()?;
        let motion = frame.motion.to_f64_3()?;
        Ok(two_stream_forward(app.view(), motion.view(), &self.params.frontend)?.0)
    }

    pub fn baseline_scores(&self, fused: &Array3<f64>) -> Result<(ScoreMap, ScoreMap)> {
        baseline_forward(fused.view(), &self.params.baseline)
    }

    pub fn region_scores(&self, fused: &Array3<f64>, regions: &RegionSet) -> Result<(ScoreMap, ScoreMap)> {
        let (pooled, _) = roi_pool_forward(fused.view(), &regions.boxes(), self.config.grid)?;
        let (scores, _) = head_forward(pooled.view(), &self.params.head)?;
        let (ya, _) = region_to_pixel_forward(regions, scores.actor.view(), self.params.background_actor.view())?;
        let (yc, _) = region_to_pixel_forward(regions, scores.action.view(), self.params.background_action.view())?;
        Ok((ya, yc))
    }

    /// Runs one head on a frame. Region mode uses `regions` when given,
    /// otherwise the frame's own region set.
    pub fn predict(
        &self,
        frame: &FrameSample,
        mode: HeadMode,
        regions: Option<&RegionSet>,
        taxonomy: &Taxonomy,
    ) -> Result<Prediction> {
        let fused = self.features(frame)?;
        let (sa, sc) = match mode {
            HeadMode::Baseline => self.baseline_scores(&fused)?,
            HeadMode::Region => self.region_scores(&fused, regions.unwrap_or(&frame.regions))?,
        };
        let p_actor = softmax_pixelwise(&sa);
        let p_action = softmax_pixelwise(&sc);
        let joint = joint_labeling(&joint_probability(&p_actor, &p_action, taxonomy, false)?, taxonomy)?;
        Ok(Prediction {
            actor: argmax_labeling(&p_actor),
            action: argmax_labeling(&p_action),
            joint,
            p_actor,
            p_action,
        })
    }
}
