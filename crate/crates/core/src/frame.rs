//! Label maps, frame samples and frame validation.

use std::fmt;

use ndarray::Array2;

use crate::region::RegionSet;
use crate::taxonomy::Taxonomy;
use crate::tensor::Tensor;

/// Per-pixel class indices with an optional exclusion mask
/// (`true` = ignored).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    pub labels: Array2<u16>,
    pub ignore: Option<Array2<bool>>,
}

impl LabelMap {
    pub fn new(labels: Array2<u16>) -> Self {
        Self {
            labels,
            ignore: None,
        }
    }

    pub fn filled(height: usize, width: usize, label: u16) -> Self {
        Self::new(Array2::from_elem((height, width), label))
    }

    pub fn with_ignore(mut self, ignore: Array2<bool>) -> Self {
        self.ignore = Some(ignore);
        self
    }

    /// `(height, width)`.
    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn is_ignored(&self, y: usize, x: usize) -> bool {
        self.ignore.as_ref().is_some_and(|m| m[[y, x]])
    }

    /// Largest non-ignored label, if any pixel is evaluated.
    pub fn max_label(&self) -> Option<u16> {
        self.labels
            .indexed_iter()
            .filter(|((y, x), _)| !self.is_ignored(*y, *x))
            .map(|(_, &l)| l)
            .max()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample {
    /// `(H, W, C_a)`
    pub appearance: Tensor,
    /// `(H, W, C_m)`
    pub motion: Tensor,
    pub gt_actor: LabelMap,
    pub gt_action: LabelMap,
    pub regions: RegionSet,
}

impl FrameSample {
    pub fn height(&self) -> usize {
        self.gt_actor.dim().0
    }

    pub fn width(&self) -> usize {
        self.gt_actor.dim().1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    BadTensorRank { field: &'static str, shape: Vec<usize> },
    SpatialMismatch { field: &'static str, expected: (usize, usize), found: (usize, usize) },
    LabelOutOfRange { field: &'static str, y: usize, x: usize, label: u16, classes: usize },
    InvalidPair { y: usize, x: usize, actor: u16, action: u16 },
    FrameSizeMismatch { width: usize, height: usize },
    DegenerateBBox { region: usize },
    BBoxOutsideFrame { region: usize },
    BadMaskRank { region: usize },
    MaskValueOutOfRange { region: usize, value: f32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadTensorRank { field, shape } => {
                write!(f, "{field}: expected (H, W, C) tensor, got shape {shape:?}")
            }
            Violation::SpatialMismatch { field, expected, found } => write!(
                f,
                "{field}: spatial dims {found:?} disagree with {expected:?}"
            ),
            Violation::LabelOutOfRange { field, y, x, label, classes } => write!(
                f,
                "label out of range: {field}[{y}, {x}] = {label} (classes: {classes})"
            ),
            Violation::InvalidPair { y, x, actor, action } => write!(
                f,
                "invalid actor-action pair ({actor}, {action}) at [{y}, {x}]"
            ),
            Violation::FrameSizeMismatch { width, height } => write!(
                f,
                "region set frame size {width}x{height} disagrees with the frame"
            ),
            Violation::DegenerateBBox { region } => {
                write!(f, "region {region}: bbox must satisfy x0 < x1 and y0 < y1")
            }
            Violation::BBoxOutsideFrame { region } => {
                write!(f, "region {region}: bbox does not intersect the frame")
            }
            Violation::BadMaskRank { region } => write!(f, "region {region}: mask must be rank 2"),
            Violation::MaskValueOutOfRange { region, value } => write!(
                f,
                "region {region}: mask value out of [0,1] ({value})"
            ),
        }
    }
}

/// Checks every frame invariant against `taxonomy`; an empty result means
/// the sample is accepted by all downstream operations.
pub fn validate_frame(sample: &FrameSample, taxonomy: &Taxonomy) -> Vec<Violation> {
    let mut out = Vec::new();
    let dims = sample.gt_actor.dim();
    let (h, w) = dims;

    for (field, t) in [("appearance", &sample.appearance), ("motion", &sample.motion)] {
        match t.shape() {
            &[th, tw, _] => {
                if (th, tw) != dims {
                    out.push(Violation::SpatialMismatch { field, expected: dims, found: (th, tw) });
                }
            }
            s => out.push(Violation::BadTensorRank { field, shape: s.to_vec() }),
        }
    }
    if sample.gt_action.dim() != dims {
        out.push(Violation::SpatialMismatch {
            field: "gt_action",
            expected: dims,
            found: sample.gt_action.dim(),
        });
    }
    for (field, map) in [("gt_actor", &sample.gt_actor), ("gt_action", &sample.gt_action)] {
        if let Some(ig) = &map.ignore {
            if ig.dim() != map.dim() {
                out.push(Violation::SpatialMismatch {
                    field: if field == "gt_actor" { "gt_actor.ignore" } else { "gt_action.ignore" },
                    expected: map.dim(),
                    found: ig.dim(),
                });
            }
        }
    }

    let label_checks = [
        ("gt_actor", &sample.gt_actor, taxonomy.num_actors()),
        ("gt_action", &sample.gt_action, taxonomy.num_actions()),
    ];
    let shapes_ok = out.is_empty();
    for (field, map, k) in label_checks {
        for ((y, x), &label) in map.labels.indexed_iter() {
            if shapes_ok && map.is_ignored(y, x) {
                continue;
            }
            if usize::from(label) >= k {
                out.push(Violation::LabelOutOfRange { field, y, x, label, classes: k });
            }
        }
    }
    if shapes_ok {
        for ((y, x), &a) in sample.gt_actor.labels.indexed_iter() {
            if sample.gt_actor.is_ignored(y, x) || sample.gt_action.is_ignored(y, x) {
                continue;
            }
            let c = sample.gt_action.labels[[y, x]];
            if usize::from(a) < taxonomy.num_actors()
                && usize::from(c) < taxonomy.num_actions()
                && !taxonomy.is_valid_pair(a.into(), c.into())
            {
                out.push(Violation::InvalidPair { y, x, actor: a, action: c });
            }
        }
    }

    let regions = &sample.regions;
    if (regions.frame_height, regions.frame_width) != (h, w) {
        out.push(Violation::FrameSizeMismatch {
            width: regions.frame_width,
            height: regions.frame_height,
        });
    }
    for (i, r) in regions.iter().enumerate() {
        let b = r.bbox();
        if !b.is_well_formed() {
            out.push(Violation::DegenerateBBox { region: i });
        } else if !b.intersects_frame(w, h) {
            out.push(Violation::BBoxOutsideFrame { region: i });
        }
        if r.mask().shape().len() != 2 {
            out.push(Violation::BadMaskRank { region: i });
        }
        if let Some(&value) = r.mask().data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            out.push(Violation::MaskValueOutOfRange { region: i, value });
        }
    }
    out
}
