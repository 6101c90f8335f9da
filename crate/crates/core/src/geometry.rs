//! Boxes, polygon rasterization, and human/object part generation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of COCO person keypoints.
pub const NUM_KEYPOINTS: usize = 17;

/// Axis-aligned box in continuous pixel coordinates with a detection
/// confidence and a category id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    pub category: u32,
}

impl BBox {
    /// Builds a box with score 1 and category 0.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::with_score(x1, y1, x2, y2, 1.0, 0)
    }

    pub fn with_score(x1: f64, y1: f64, x2: f64, y2: f64, score: f64, category: u32) -> Result<Self> {
        let b = BBox {
            x1,
            y1,
            x2,
            y2,
            score,
            category,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("box {coords:?} has non-finite coordinates")));
        }
        if !(self.x2 > self.x1 && self.y2 > self.y1) {
            return Err(Error::validation(format!(
                "box {coords:?} must satisfy x2 > x1 and y2 > y1"
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::validation(format!("box score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Longest side, the reference length for part-box sizes.
    pub fn max_side(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
            ..*self
        }
    }

    /// Square box of side `side` centered at `(cx, cy)`, carrying this box's score and category.
    pub(crate) fn square_at(&self, cx: f64, cy: f64, side: f64) -> BBox {
        let half = side / 2.0;
        BBox {
            x1: cx - half,
            y1: cy - half,
            x2: cx + half,
            y2: cy + half,
            ..*self
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }
}

/// Intersection over union of two boxes. Disjoint or touching boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest box containing both inputs. Score and category are taken from `a`.
pub fn union_box(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
        ..*a
    }
}

/// 17 person keypoints in image coordinates, each with a visibility flag.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub points: [(f64, f64); NUM_KEYPOINTS],
    pub visible: [bool; NUM_KEYPOINTS],
}

impl KeypointSet {
    pub fn new(points: [(f64, f64); NUM_KEYPOINTS], visible: [bool; NUM_KEYPOINTS]) -> Self {
        KeypointSet { points, visible }
    }

    pub fn invisible() -> Self {
        KeypointSet {
            points: [(0.0, 0.0); NUM_KEYPOINTS],
            visible: [false; NUM_KEYPOINTS],
        }
    }

    /// Parses the COCO `[x, y, v, x, y, v, ...]` layout; `v > 0` marks a visible point.
    pub fn from_coco(flat: &[f64]) -> Result<Self> {
        if flat.len() != NUM_KEYPOINTS * 3 {
            return Err(Error::validation(format!(
                "expected {} keypoint values, got {}",
                NUM_KEYPOINTS * 3,
                flat.len()
            )));
        }
        let mut kps = KeypointSet::invisible();
        for (k, chunk) in flat.chunks_exact(3).enumerate() {
            kps.points[k] = (chunk[0], chunk[1]);
            kps.visible[k] = chunk[2] > 0.0 && chunk[0].is_finite() && chunk[1].is_finite();
        }
        Ok(kps)
    }

    pub fn to_coco(&self) -> Vec<f64> {
        self.points
            .iter()
            .zip(self.visible.iter())
            .flat_map(|(&(x, y), &v)| [x, y, if v { 2.0 } else { 0.0 }])
            .collect()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> KeypointSet {
        let mut out = self.clone();
        for p in out.points.iter_mut() {
            p.0 += dx;
            p.1 += dy;
        }
        out
    }
}

/// Closed polygons in image pixel coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolygonMask {
    pub polygons: Vec<Vec<(f64, f64)>>,
}

impl PolygonMask {
    pub fn new(polygons: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        for (i, poly) in polygons.iter().enumerate() {
            if poly.len() < 3 {
                return Err(Error::validation(format!(
                    "polygon {i} has {} vertices, need at least 3",
                    poly.len()
                )));
            }
        }
        Ok(PolygonMask { polygons })
    }

    /// Parses COCO flat lists `[x1, y1, x2, y2, ...]`, one per polygon.
    pub fn from_flat(flat: &[Vec<f64>]) -> Result<Self> {
        let mut polygons = Vec::with_capacity(flat.len());
        for (i, coords) in flat.iter().enumerate() {
            if coords.len() % 2 != 0 {
                return Err(Error::validation(format!(
                    "polygon {i} has an odd number of coordinates ({})",
                    coords.len()
                )));
            }
            polygons.push(coords.chunks_exact(2).map(|c| (c[0], c[1])).collect());
        }
        Self::new(polygons)
    }

    pub fn to_flat(&self) -> Vec<Vec<f64>> {
        self.polygons
            .iter()
            .map(|p| p.iter().flat_map(|&(x, y)| [x, y]).collect())
            .collect()
    }

    /// Axis-aligned rectangle covering `b`.
    pub fn rectangle(b: &BBox) -> Self {
        PolygonMask {
            polygons: vec![vec![(b.x1, b.y1), (b.x2, b.y1), (b.x2, b.y2), (b.x1, b.y2)]],
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> PolygonMask {
        PolygonMask {
            polygons: self
                .polygons
                .iter()
                .map(|p| p.iter().map(|&(x, y)| (x + dx, y + dy)).collect())
                .collect(),
        }
    }
}

/// Row-major binary mask; `bits[i * width + j]` is pixel row `i`, column `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![1; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// Pixel extent of the mask that covers `b`.
pub fn mask_dims(b: &BBox) -> Result<(usize, usize)> {
    let w = b.width().round();
    let h = b.height().round();
    if w < 1.0 || h < 1.0 {
        return Err(Error::validation(format!(
            "box {:?} rounds to an empty pixel extent",
            b.coords()
        )));
    }
    Ok((w as usize, h as usize))
}

/// Rasterizes polygons into a mask covering `b`. Pixel `(i, j)` is set when its
/// center `(b.x1 + j + 0.5, b.y1 + i + 0.5)` lies inside any polygon.
///
/// Each row is scanned by collecting edge crossings at the row's center line, so
/// the cost is proportional to edges times rows rather than edges times pixels.
pub fn rasterize(poly: &PolygonMask, b: &BBox) -> Result<BinaryMask> {
    let (w, h) = mask_dims(b)?;
    let mut mask = BinaryMask::zeros(w, h);
    let mut crossings = Vec::new();
    for row in 0..h {
        let y = b.y1 + row as f64 + 0.5;
        for polygon in &poly.polygons {
            crossings.clear();
            let n = polygon.len();
            for i in 0..n {
                let (xi, yi) = polygon[i];
                let (xj, yj) = polygon[(i + n - 1) % n];
                if (yi > y) != (yj > y) {
                    crossings.push(xi + (y - yi) * (xj - xi) / (yj - yi));
                }
            }
            crossings.sort_by(f64::total_cmp);
            for col in 0..w {
                let x = b.x1 + col as f64 + 0.5;
                // Parity of crossings strictly right of the center.
                let right = crossings.len() - crossings.partition_point(|&c| c <= x);
                if right % 2 == 1 {
                    mask.set(row, col, 1);
                }
            }
        }
    }
    Ok(mask)
}

/// Grid-derived object parts. All vectors have `grid * grid` entries in
/// row-major bin order. `points` are box-relative; `part_boxes` are in image
/// coordinates. Entries whose flag is false carry the bin center and must be
/// treated as absent downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectParts {
    pub grid: usize,
    pub points: Vec<(f64, f64)>,
    pub flags: Vec<bool>,
    pub part_boxes: Vec<BBox>,
}

impl ObjectParts {
    pub fn num_valid(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Parameters of object-part generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartGrid {
    /// Bins per side.
    pub grid: usize,
    /// Minimum fraction of a bin's pixels that must belong to the object.
    pub min_ratio: f64,
    /// Part-box side as a fraction of the box's longest side.
    pub box_ratio: f64,
}

/// Splits the object box into `grid x grid` bins and takes the mean object
/// pixel of each bin as a part point.
///
/// A part is valid when the mask is set at the (floored, clamped) mean point
/// and the bin holds more than `min_ratio * pixels_in_bin` object pixels.
pub fn generate_object_parts(mask: &BinaryMask, b: &BBox, params: PartGrid) -> Result<ObjectParts> {
    let PartGrid {
        grid,
        min_ratio,
        box_ratio,
    } = params;
    if grid == 0 {
        return Err(Error::validation("part grid size must be at least 1"));
    }
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(Error::validation(format!("min bin ratio {min_ratio} outside (0, 1)")));
    }
    let (w, h) = mask_dims(b)?;
    if (mask.width, mask.height) != (w, h) {
        return Err(Error::Shape(format!(
            "mask is {}x{} but box {:?} needs {}x{}",
            mask.width,
            mask.height,
            b.coords(),
            w,
            h
        )));
    }

    let bins = grid * grid;
    let mut sum_x = vec![0.0f64; bins];
    let mut sum_y = vec![0.0f64; bins];
    let mut object_px = vec![0usize; bins];
    let mut total_px = vec![0usize; bins];
    let bin_of = |center: f64, extent: usize| -> usize {
        ((center * grid as f64 / extent as f64).floor() as usize).min(grid - 1)
    };
    for row in 0..h {
        let cy = row as f64 + 0.5;
        let by = bin_of(cy, h);
        for col in 0..w {
            let cx = col as f64 + 0.5;
            let k = by * grid + bin_of(cx, w);
            total_px[k] += 1;
            if mask.get(row, col) == 1 {
                object_px[k] += 1;
                sum_x[k] += cx;
                sum_y[k] += cy;
            }
        }
    }

    let side = box_ratio * b.max_side();
    let mut points = Vec::with_capacity(bins);
    let mut flags = Vec::with_capacity(bins);
    let mut part_boxes = Vec::with_capacity(bins);
    for k in 0..bins {
        let (point, valid) = if object_px[k] == 0 {
            let (bx, by) = (k % grid, k / grid);
            let cx = (bx as f64 + 0.5) * w as f64 / grid as f64;
            let cy = (by as f64 + 0.5) * h as f64 / grid as f64;
            ((cx, cy), false)
        } else {
            let n = object_px[k] as f64;
            let (mx, my) = (sum_x[k] / n, sum_y[k] / n);
            let col = (mx.floor().max(0.0) as usize).min(w - 1);
            let row = (my.floor().max(0.0) as usize).min(h - 1);
            let in_mask = mask.get(row, col) == 1;
            let supported = object_px[k] as f64 > min_ratio * total_px[k] as f64;
            ((mx, my), in_mask && supported)
        };
        points.push(point);
        flags.push(valid);
        part_boxes.push(b.square_at(b.x1 + point.0, b.y1 + point.1, side));
    }
    Ok(ObjectParts {
        grid,
        points,
        flags,
        part_boxes,
    })
}

/// Square local boxes around the 17 keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanParts {
    pub part_boxes: Vec<BBox>,
    pub visible: [bool; NUM_KEYPOINTS],
}

/// Places a square of side `box_ratio * max(h, w)` of the human box on every keypoint.
pub fn generate_human_parts(kps: &KeypointSet, human: &BBox, box_ratio: f64) -> HumanParts {
    let side = box_ratio * human.max_side();
    let part_boxes = kps.points.iter().map(|&(x, y)| human.square_at(x, y, side)).collect();
    HumanParts {
        part_boxes,
        visible: kps.visible,
    }
}
