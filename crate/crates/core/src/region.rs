//! Region masks: a bounding box in frame coordinates plus an in-box
//! probability grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned box `(x0, y0, x1, y1)` in frame pixel coordinates. Pixel
/// `(x, y)` lies inside when `x0 <= x < x1` and `y0 <= y < y1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn is_well_formed(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.x0 < self.x1 && self.y0 < self.y1
    }

    pub fn intersects_frame(&self, width: usize, height: usize) -> bool {
        self.x0 < width as f64 && self.x1 > 0.0 && self.y0 < height as f64 && self.y1 > 0.0
    }

    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as f64, y as f64);
        self.x0 <= x && x < self.x1 && self.y0 <= y && y < self.y1
    }

    /// Integer pixel range `[lo, hi)` along x whose indices satisfy
    /// `x0 <= x < x1`, clipped to the frame.
    fn pixel_span(lo: f64, hi: f64, limit: usize) -> (usize, usize) {
        let start = lo.ceil().max(0.0);
        let end = hi.ceil().min(limit as f64);
        if end <= start {
            (0, 0)
        } else {
            (start as usize, end as usize)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    bbox: BBox,
    mask: Tensor,
}

impl RegionMask {
    /// Checked constructor: the box must be well formed, the mask rank 2
    /// with every value in `[0, 1]`.
    pub fn new(bbox: BBox, mask: Tensor) -> Result<Self> {
        if !bbox.is_well_formed() {
            return Err(Error::InvalidArgument(format!(
                "bbox {:?} must satisfy x0 < x1 and y0 < y1",
                bbox.to_array()
            )));
        }
        mask.view2()?;
        if mask.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument("mask value out of [0,1]".into()));
        }
        Ok(Self { bbox, mask })
    }

    /// Builds a region without checking invariants. Used by readers so that
    /// `validate_frame` can report problems instead of failing early.
    pub fn new_unchecked(bbox: BBox, mask: Tensor) -> Self {
        Self { bbox, mask }
    }

    /// A region whose box exactly covers `mask` placed at integer offset
    /// `(x, y)`.
    pub fn from_pixel_mask(x: usize, y: usize, mask: Tensor) -> Result<Self> {
        let (h, w) = mask.view2()?.dim();
        let bbox = BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64);
        Self::new(bbox, mask)
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    /// `(H_b, W_b)` of the mask grid.
    pub fn mask_dims(&self) -> (usize, usize) {
        let s = self.mask.shape();
        (s[0], s.get(1).copied().unwrap_or(1))
    }

    /// Mask probability at frame pixel `(x, y)` by nearest-cell lookup:
    /// `cell = floor((p - origin) / extent * dim)`, clamped to the grid.
    pub fn mask_at_pixel(&self, x: usize, y: usize) -> f32 {
        if !self.bbox.contains_pixel(x, y) {
            return 0.0;
        }
        let (hb, wb) = self.mask_dims();
        let col = cell(x as f64, self.bbox.x0, self.bbox.width(), wb);
        let row = cell(y as f64, self.bbox.y0, self.bbox.height(), hb);
        self.mask.data()[row * wb + col]
    }

    /// Every frame pixel with `m > 0`, as `(row-major pixel index, m)` in
    /// increasing pixel order.
    pub fn rasterize(&self, width: usize, height: usize) -> Vec<(usize, f64)> {
        let (xs, xe) = BBox::pixel_span(self.bbox.x0, self.bbox.x1, width);
        let (ys, ye) = BBox::pixel_span(self.bbox.y0, self.bbox.y1, height);
        let mut out = Vec::new();
        for y in ys..ye {
            for x in xs..xe {
                let m = self.mask_at_pixel(x, y);
                if m > 0.0 {
                    out.push((y * width + x, f64::from(m)));
                }
            }
        }
        out
    }
}

fn cell(p: f64, origin: f64, extent: f64, dim: usize) -> usize {
    let c = ((p - origin) / extent * dim as f64).floor();
    (c.max(0.0) as usize).min(dim - 1)
}

/// Ordered region list for one frame. Order matters: fusion ties resolve
/// toward the lower index.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSet {
    pub regions: Vec<RegionMask>,
    pub frame_width: usize,
    pub frame_height: usize,
}

impl RegionSet {
    pub fn new(regions: Vec<RegionMask>, frame_width: usize, frame_height: usize) -> Self {
        Self {
            regions,
            frame_width,
            frame_height,
        }
    }

    pub fn empty(frame_width: usize, frame_height: usize) -> Self {
        Self::new(Vec::new(), frame_width, frame_height)
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RegionMask> {
        self.regions.iter()
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.regions.iter().map(|r| r.bbox()).collect()
    }
}
