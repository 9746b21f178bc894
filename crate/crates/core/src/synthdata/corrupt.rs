use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::{BBox, RegionMask, RegionSet};
use crate::tensor::Tensor;

/// Mask defects applied by [`corrupt_masks`], in this order: resolution
/// loss, erosion or dilation, box jitter, region drops, spurious regions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    /// Each box coordinate moves by up to this many pixels.
    pub jitter: f64,
    /// Positive erodes, negative dilates, by a square of this radius in
    /// mask cells.
    pub morph_radius: i32,
    pub drop_prob: f64,
    /// Chance, per original region (at least one trial per frame), of
    /// adding a spurious background region.
    pub spurious_rate: f64,
    /// Block-average by this factor, then upsample back; 0 and 1 disable.
    pub downsample: usize,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        let rate = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) || !rate(self.drop_prob) || !rate(self.spurious_rate) {
            return Err(Error::InvalidArgument(
                "jitter must be finite and non-negative, rates in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.jitter == 0.0
            && self.morph_radius == 0
            && self.drop_prob == 0.0
            && self.spurious_rate == 0.0
            && self.downsample <= 1
    }

    /// Mild defects: half-resolution masks and one pixel of box jitter.
    pub fn mild(seed: u64) -> Self {
        Self { jitter: 1.0, downsample: 2, seed, ..Default::default() }
    }

    /// Severe defects: coarse, eroded, shifted masks with drops and
    /// background false positives.
    pub fn severe(seed: u64) -> Self {
        Self {
            jitter: 3.0,
            morph_radius: 2,
            drop_prob: 0.3,
            spurious_rate: 0.5,
            downsample: 4,
            seed,
        }
    }
}

fn downsample(mask: &Array2<f32>, f: usize) -> Array2<f32> {
    let (h, w) = mask.dim();
    let (ch, cw) = (h.div_ceil(f), w.div_ceil(f));
    let mut coarse = Array2::<f32>::zeros((ch, cw));
    for cy in 0..ch {
        for cx in 0..cw {
            let block = mask.slice(ndarray::s![cy * f..((cy + 1) * f).min(h), cx * f..((cx + 1) * f).min(w)]);
            coarse[[cy, cx]] = block.sum() / block.len() as f32;
        }
    }
    Array2::from_shape_fn((h, w), |(y, x)| coarse[[y / f, x / f]])
}

/// Square erosion (`r > 0`) or dilation (`r < 0`); outside the grid counts
/// as 0. Dilation grows the grid by `|r|` cells on every side.
fn morph(mask: &Array2<f32>, r: i32) -> (Array2<f32>, usize) {
    let (h, w) = mask.dim();
    let k = r.unsigned_abs() as usize;
    let erode = r > 0;
    let pad = if erode { 0 } else { k };
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mask[[y as usize, x as usize]]
        }
    };
    let out = Array2::from_shape_fn((oh, ow), |(y, x)| {
        let (cy, cx) = (y as isize - pad as isize, x as isize - pad as isize);
        let mut acc = if erode { f32::INFINITY } else { 0.0f32 };
        for dy in -(k as isize)..=k as isize {
            for dx in -(k as isize)..=k as isize {
                let v = at(cy + dy, cx + dx);
                acc = if erode { acc.min(v) } else { acc.max(v) };
            }
        }
        acc
    });
    (out, pad)
}

/// Trims all-zero border rows and columns, returning the new grid and the
/// removed leading `(rows, cols)`; `None` when nothing is left.
fn trim(mask: &Array2<f32>) -> Option<(Array2<f32>, usize, usize)> {
    let rows: Vec<usize> = (0..mask.nrows()).filter(|&y| mask.row(y).iter().any(|&v| v > 0.0)).collect();
    let cols: Vec<usize> = (0..mask.ncols()).filter(|&x| mask.column(x).iter().any(|&v| v > 0.0)).collect();
    let (&r0, &r1) = (rows.first()?, rows.last()?);
    let (&c0, &c1) = (cols.first()?, cols.last()?);
    Some((mask.slice(ndarray::s![r0..=r1, c0..=c1]).to_owned(), r0, c0))
}

fn reshape_region(region: &RegionMask, spec: &CorruptionSpec) -> Result<Option<RegionMask>> {
    let mut mask = region.mask().view2()?.to_owned();
    let mut b = region.bbox();
    let (hb, wb) = mask.dim();
    let (cell_h, cell_w) = (b.height() / hb as f64, b.width() / wb as f64);
    if spec.downsample > 1 {
        mask = downsample(&mask, spec.downsample);
    }
    if spec.morph_radius != 0 {
        let (m, pad) = morph(&mask, spec.morph_radius);
        let p = pad as f64;
        b = BBox::new(b.x0 - p * cell_w, b.y0 - p * cell_h, b.x1 + p * cell_w, b.y1 + p * cell_h);
        let Some((m, r0, c0)) = trim(&m) else {
            return Ok(None);
        };
        let (nh, nw) = m.dim();
        let x0 = b.x0 + c0 as f64 * cell_w;
        let y0 = b.y0 + r0 as f64 * cell_h;
        b = BBox::new(x0, y0, x0 + nw as f64 * cell_w, y0 + nh as f64 * cell_h);
        mask = m;
    }
    Ok(Some(RegionMask::new(b, Tensor::from_array2(&mask)?)?))
}

fn jitter_box(b: BBox, amp: f64, rng: &mut ChaCha8Rng) -> BBox {
    let mut d = || rng.random_range(-amp..=amp);
    let (x0, y0, x1, y1) = (b.x0 + d(), b.y0 + d(), b.x1 + d(), b.y1 + d());
    // keep at least one pixel of extent
    BBox::new(x0, y0, x1.max(x0 + 1.0), y1.max(y0 + 1.0))
}

fn spurious_region(set: &RegionSet, rng: &mut ChaCha8Rng) -> Result<Option<RegionMask>> {
    let (w, h) = (set.frame_width, set.frame_height);
    let max_side = (w.min(h) / 2).max(2);
    let boxes = set.boxes();
    for _ in 0..20 {
        let sh = rng.random_range(2..=max_side);
        let sw = rng.random_range(2..=max_side);
        let y = rng.random_range(0..=h.saturating_sub(sh));
        let x = rng.random_range(0..=w.saturating_sub(sw));
        let b = BBox::new(x as f64, y as f64, (x + sw) as f64, (y + sh) as f64);
        let hits = boxes.iter().any(|o| o.x0 < b.x1 && b.x0 < o.x1 && o.y0 < b.y1 && b.y0 < o.y1);
        if !hits {
            let mask = Array2::from_shape_fn((sh, sw), |_| rng.random_range(0.5f32..=1.0));
            return Ok(Some(RegionMask::new(b, Tensor::from_array2(&mask)?)?));
        }
    }
    Ok(None)
}

/// Degrades a region set; a pure function of `(regions, spec)`. Regions
/// emptied by erosion or pushed off the frame are removed.
pub fn corrupt_masks(regions: &RegionSet, spec: &CorruptionSpec) -> Result<RegionSet> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(regions.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (regions.frame_width, regions.frame_height);
    let mut out = Vec::with_capacity(regions.len());
    for r in regions.iter() {
        let Some(mut r) = reshape_region(r, spec)? else {
            continue;
        };
        if spec.jitter > 0.0 {
            r = RegionMask::new(jitter_box(r.bbox(), spec.jitter, &mut rng), r.mask().clone())?;
        }
        if !r.bbox().intersects_frame(w, h) || r.rasterize(w, h).is_empty() {
            continue;
        }
        out.push(r);
    }
    if spec.drop_prob > 0.0 {
        out.retain(|_| !rng.random_bool(spec.drop_prob));
    }
    let mut set = RegionSet::new(out, w, h);
    if spec.spurious_rate > 0.0 {
        for _ in 0..regions.len().max(1) {
            if rng.random_bool(spec.spurious_rate) {
                if let Some(r) = spurious_region(&set, &mut rng)? {
                    set.regions.push(r);
                }
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_scene, SceneSpec};

    fn square(side: usize) -> RegionSet {
        let m = Tensor::new(vec![side, side], vec![1.0; side * side]).unwrap();
        RegionSet::new(vec![RegionMask::from_pixel_mask(3, 4, m).unwrap()], 20, 20)
    }

    #[test]
    fn zero_spec_is_identity() {
        let f = generate_scene(&SceneSpec::default(), 3).unwrap();
        assert_eq!(corrupt_masks(&f.regions, &CorruptionSpec::default()).unwrap(), f.regions);
    }

    #[test]
    fn drop_all() {
        let f = generate_scene(&SceneSpec::default(), 3).unwrap();
        let spec = CorruptionSpec { drop_prob: 1.0, ..Default::default() };
        assert!(corrupt_masks(&f.regions, &spec).unwrap().is_empty());
    }

    #[test]
    fn erosion_of_square() {
        let spec = CorruptionSpec { morph_radius: 1, ..Default::default() };
        let out = corrupt_masks(&square(10), &spec).unwrap();
        let r = &out.regions[0];
        assert_eq!(r.mask_dims(), (8, 8));
        assert!(r.mask().data().iter().all(|&v| v == 1.0));
        assert_eq!(r.bbox(), BBox::new(4.0, 5.0, 12.0, 13.0));
        assert_eq!(r.rasterize(20, 20).len(), 64);
    }

    #[test]
    fn dilation_grows_box() {
        let spec = CorruptionSpec { morph_radius: -2, ..Default::default() };
        let out = corrupt_masks(&square(4), &spec).unwrap();
        assert_eq!(out.regions[0].bbox(), BBox::new(1.0, 2.0, 9.0, 10.0));
        assert_eq!(out.regions[0].rasterize(20, 20).len(), 64);
    }

    #[test]
    fn full_erosion_removes_region() {
        let spec = CorruptionSpec { morph_radius: 3, ..Default::default() };
        assert!(corrupt_masks(&square(4), &spec).unwrap().is_empty());
    }

    #[test]
    fn downsample_keeps_values_in_unit_interval() {
        let f = generate_scene(&SceneSpec { shapes: vec![crate::synthdata::ShapeKind::Ellipse], ..Default::default() }, 9)
            .unwrap();
        let out = corrupt_masks(&f.regions, &CorruptionSpec { downsample: 3, ..Default::default() }).unwrap();
        assert_eq!(out.len(), f.regions.len());
        for r in out.iter() {
            assert!(r.mask().data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn severe_is_deterministic_and_valid() {
        let spec = CorruptionSpec::severe(11);
        for seed in 0..30 {
            let f = generate_scene(&SceneSpec::default(), seed).unwrap();
            let a = corrupt_masks(&f.regions, &spec).unwrap();
            assert_eq!(a, corrupt_masks(&f.regions, &spec).unwrap());
            for r in a.iter() {
                assert!(r.bbox().is_well_formed());
                assert!(r.mask().data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn rejects_out_of_range_rates() {
        let spec = CorruptionSpec { drop_prob: 1.5, ..Default::default() };
        assert!(corrupt_masks(&square(4), &spec).is_err());
    }
}
