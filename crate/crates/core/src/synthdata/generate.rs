use ndarray::{Array2, Array3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FrameSample, LabelMap};
use crate::region::{RegionMask, RegionSet};
use crate::taxonomy::Taxonomy;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub min_actors: usize,
    pub max_actors: usize,
    /// Inclusive side length range of a shape's box.
    pub min_size: usize,
    pub max_size: usize,
    pub shapes: Vec<ShapeKind>,
    /// Appearance pattern per actor class, background included.
    pub appearance_signatures: Vec<Vec<f32>>,
    /// Motion pattern per action class, background included.
    pub motion_signatures: Vec<Vec<f32>>,
    /// Uniform noise in `[-noise, noise]` added to every channel.
    pub noise: f32,
    /// Fraction of each shape's pixels (its bottom rows) that moves.
    pub part_fraction: f64,
    pub allow_overlap: bool,
    pub max_attempts: usize,
    pub taxonomy: Taxonomy,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let taxonomy = Taxonomy::synthetic();
        // one channel per real actor, background dark
        let appearance_signatures = (0..taxonomy.num_actors())
            .map(|a| (1..taxonomy.num_actors()).map(|c| if c == a { 1.0 } else { 0.0 }).collect())
            .collect();
        let dirs = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]];
        let motion_signatures = dirs.iter().map(|d| d.to_vec()).collect();
        Self {
            height: 32,
            width: 32,
            min_actors: 1,
            max_actors: 3,
            min_size: 8,
            max_size: 14,
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Ellipse],
            appearance_signatures,
            motion_signatures,
            noise: 0.1,
            part_fraction: 0.25,
            allow_overlap: false,
            max_attempts: 200,
            taxonomy,
        }
    }
}

impl SceneSpec {
    pub fn appearance_channels(&self) -> usize {
        self.appearance_signatures.first().map_or(0, Vec::len)
    }

    pub fn motion_channels(&self) -> usize {
        self.motion_signatures.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.height < 16 || self.width < 16 {
            return bad(format!("frame {}x{} must be at least 16x16", self.height, self.width));
        }
        if !(self.part_fraction > 0.0 && self.part_fraction < 1.0) {
            return bad(format!("part fraction {} must be in (0, 1)", self.part_fraction));
        }
        if self.min_actors > self.max_actors || self.min_size == 0 || self.min_size > self.max_size {
            return bad("actor count and size ranges must be nonempty".into());
        }
        if self.max_size > self.height.min(self.width) {
            return bad(format!("max size {} does not fit the frame", self.max_size));
        }
        if self.max_actors > 0 && self.shapes.is_empty() {
            return bad("shape vocabulary is empty".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        if self.max_attempts == 0 {
            return bad("max attempts must be positive".into());
        }
        check_signatures("appearance", &self.appearance_signatures, self.taxonomy.num_actors())?;
        check_signatures("motion", &self.motion_signatures, self.taxonomy.num_actions())?;
        if self.max_actors > 0 && foreground_pairs(&self.taxonomy).is_empty() {
            return bad("taxonomy has no foreground pair".into());
        }
        Ok(())
    }
}

fn check_signatures(what: &str, sigs: &[Vec<f32>], classes: usize) -> Result<()> {
    if sigs.len() != classes {
        return Err(Error::InvalidArgument(format!("{} {what} signatures for {classes} classes", sigs.len())));
    }
    let width = sigs[0].len();
    if width == 0 || sigs.iter().any(|s| s.len() != width || s.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument(format!("{what} signatures must share a positive width")));
    }
    for i in 0..sigs.len() {
        for j in 0..i {
            if sigs[i] == sigs[j] {
                return Err(Error::InvalidArgument(format!("{what} signatures {j} and {i} coincide")));
            }
        }
    }
    Ok(())
}

fn foreground_pairs(t: &Taxonomy) -> Vec<(usize, usize)> {
    t.valid_pairs()
        .iter()
        .copied()
        .filter(|&(a, c)| a != t.background_actor() && c != t.background_action())
        .collect()
}

struct Placed {
    x: usize,
    y: usize,
    mask: Array2<bool>,
    actor: usize,
    action: usize,
}

fn shape_mask(kind: ShapeKind, h: usize, w: usize) -> Array2<bool> {
    match kind {
        ShapeKind::Rectangle => Array2::from_elem((h, w), true),
        ShapeKind::Ellipse => {
            let (ry, rx) = (h as f64 / 2.0, w as f64 / 2.0);
            Array2::from_shape_fn((h, w), |(y, x)| {
                let dy = (y as f64 + 0.5 - ry) / ry;
                let dx = (x as f64 + 0.5 - rx) / rx;
                dx * dx + dy * dy <= 1.0
            })
        }
    }
}

/// Pixels of the moving part: the bottom `fraction` of the shape, taken in
/// (row descending, column ascending) order.
fn part_pixels(mask: &Array2<bool>, fraction: f64) -> Vec<(usize, usize)> {
    let mut px: Vec<(usize, usize)> = mask.indexed_iter().filter(|(_, &m)| m).map(|(p, _)| p).collect();
    px.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let n = ((px.len() as f64 * fraction).round() as usize).clamp(1, px.len());
    px.truncate(n);
    px
}

/// One frame, a pure function of `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<FrameSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height, spec.width);
    let pairs = foreground_pairs(&spec.taxonomy);
    let count = rng.random_range(spec.min_actors..=spec.max_actors);

    let mut placed: Vec<Placed> = Vec::new();
    let mut occupied = Array2::from_elem((h, w), false);
    for _ in 0..count {
        let mut attempts = 0;
        loop {
            if attempts == spec.max_attempts {
                return Err(Error::PlacementFailed { attempts });
            }
            attempts += 1;
            let sh = rng.random_range(spec.min_size..=spec.max_size);
            let sw = rng.random_range(spec.min_size..=spec.max_size);
            let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
            let y = rng.random_range(0..=h - sh);
            let x = rng.random_range(0..=w - sw);
            // Boxes stay disjoint so that every mask is tight and exclusive.
            if !spec.allow_overlap && occupied.slice(ndarray::s![y..y + sh, x..x + sw]).iter().any(|&o| o) {
                continue;
            }
            occupied.slice_mut(ndarray::s![y..y + sh, x..x + sw]).fill(true);
            let (actor, action) = pairs[rng.random_range(0..pairs.len())];
            placed.push(Placed { x, y, mask: shape_mask(kind, sh, sw), actor, action });
            break;
        }
    }

    let t = &spec.taxonomy;
    let ca = spec.appearance_channels();
    let cm = spec.motion_channels();
    let mut actor = Array2::from_elem((h, w), t.background_actor() as u16);
    let mut action = Array2::from_elem((h, w), t.background_action() as u16);
    let mut appearance = Array3::<f32>::zeros((h, w, ca));
    let mut motion = Array3::<f32>::zeros((h, w, cm));
    for y in 0..h {
        for x in 0..w {
            for c in 0..ca {
                appearance[[y, x, c]] = spec.appearance_signatures[t.background_actor()][c];
            }
            for c in 0..cm {
                motion[[y, x, c]] = spec.motion_signatures[t.background_action()][c];
            }
        }
    }
    let mut regions = Vec::with_capacity(placed.len());
    for p in &placed {
        for ((dy, dx), &m) in p.mask.indexed_iter() {
            if m {
                let (yy, xx) = (p.y + dy, p.x + dx);
                actor[[yy, xx]] = p.actor as u16;
                action[[yy, xx]] = p.action as u16;
                for c in 0..ca {
                    appearance[[yy, xx, c]] = spec.appearance_signatures[p.actor][c];
                }
                // the body is still; only the part carries motion
                for c in 0..cm {
                    motion[[yy, xx, c]] = 0.0;
                }
            }
        }
        for (dy, dx) in part_pixels(&p.mask, spec.part_fraction) {
            for c in 0..cm {
                motion[[p.y + dy, p.x + dx, c]] = spec.motion_signatures[p.action][c];
            }
        }
        let mask = p.mask.mapv(|m| if m { 1.0f32 } else { 0.0 });
        regions.push(RegionMask::from_pixel_mask(p.x, p.y, Tensor::from_array2(&mask)?)?);
    }
    if spec.noise > 0.0 {
        let n = spec.noise;
        for v in appearance.iter_mut().chain(motion.iter_mut()) {
            *v += rng.random_range(-n..=n);
        }
    }
    Ok(FrameSample {
        appearance: Tensor::from_array3(&appearance)?,
        motion: Tensor::from_array3(&motion)?,
        gt_actor: LabelMap::new(actor),
        gt_action: LabelMap::new(action),
        regions: RegionSet::new(regions, w, h),
    })
}

/// `count` frames; frame seeds are drawn from a generator seeded with `seed`.
pub fn generate_dataset(spec: &SceneSpec, count: usize, seed: u64) -> Result<Vec<FrameSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate_scene(spec, rng.next_u64())).collect()
}
