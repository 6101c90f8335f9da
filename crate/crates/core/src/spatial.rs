//! Coordinate and offset maps, ROI cropping, and the pairwise spatial map stack.

use crate::error::{Error, Result};
use crate::geometry::{BBox, KeypointSet};

/// COCO person skeleton, 0-based keypoint indices, in drawing order.
pub const COCO_SKELETON: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

const SKELETON_MIN_INTENSITY: f64 = 0.05;
const SKELETON_MAX_INTENSITY: f64 = 0.95;

/// Read access to a channel-major `C x H x W` grid whose cell `(y, x)` is
/// centered at continuous coordinate `(x + 0.5, y + 0.5)`.
pub trait MapView {
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn channels(&self) -> usize;
    fn at(&self, channel: usize, y: usize, x: usize) -> f64;
}

/// Dense channel-major feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::validation("feature map dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        FeatureMap {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    /// Elementwise `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &FeatureMap, beta: f64) -> Result<FeatureMap> {
        if (self.channels, self.height, self.width) != (other.channels, other.height, other.width) {
            return Err(Error::Shape("cannot combine maps of different shapes".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(FeatureMap { data, ..*self })
    }
}

impl MapView for FeatureMap {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }
}

/// Two-channel map of pixel-center coordinates: channel 0 is x, channel 1 is y.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordMap(FeatureMap);

impl CoordMap {
    pub fn map(&self) -> &FeatureMap {
        &self.0
    }
}

impl MapView for CoordMap {
    fn height(&self) -> usize {
        self.0.height
    }
    fn width(&self) -> usize {
        self.0.width
    }
    fn channels(&self) -> usize {
        2
    }
    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.at(c, y, x)
    }
}

pub fn make_coord_map(height: usize, width: usize) -> Result<CoordMap> {
    if height == 0 || width == 0 {
        return Err(Error::validation("coordinate map dimensions must be positive"));
    }
    Ok(CoordMap(FeatureMap::from_fn(2, height, width, |c, y, x| {
        if c == 0 {
            x as f64 + 0.5
        } else {
            y as f64 + 0.5
        }
    })))
}

/// Offset maps relative to the object center (`to_object`) and the human
/// center (`to_human`), both two-channel.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetMaps {
    pub to_object: FeatureMap,
    pub to_human: FeatureMap,
}

/// Optional rescaling of raw pixel offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetScale {
    /// Raw pixel differences.
    #[default]
    Pixels,
    /// Divide by the longest side of the union box.
    UnionMaxSide,
}

pub fn offset_maps(coord: &CoordMap, human: &BBox, object: &BBox, scale: OffsetScale) -> OffsetMaps {
    let (xh, yh) = human.center();
    let (xo, yo) = object.center();
    let norm = match scale {
        OffsetScale::Pixels => 1.0,
        OffsetScale::UnionMaxSide => crate::geometry::union_box(human, object).max_side(),
    };
    let shift = |cx: f64, cy: f64| {
        let src = &coord.0;
        FeatureMap::from_fn(2, src.height, src.width, |c, y, x| {
            let center = if c == 0 { cx } else { cy };
            let d = src.at(c, y, x) - center;
            if norm == 1.0 {
                d
            } else {
                d / norm
            }
        })
    };
    OffsetMaps {
        to_object: shift(xo, yo),
        to_human: shift(xh, yh),
    }
}

/// Bilinear sample at continuous `(x, y)`, clamping to the outermost cell centers.
fn bilinear<M: MapView + ?Sized>(map: &M, c: usize, x: f64, y: f64) -> f64 {
    let u = (x - 0.5).clamp(0.0, (map.width() - 1) as f64);
    let v = (y - 0.5).clamp(0.0, (map.height() - 1) as f64);
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let x1 = (x0 + 1).min(map.width() - 1);
    let y1 = (y0 + 1).min(map.height() - 1);
    let lx = u - x0 as f64;
    let ly = v - y0 as f64;
    let top = map.at(c, y0, x0) * (1.0 - lx) + map.at(c, y0, x1) * lx;
    let bottom = map.at(c, y1, x0) * (1.0 - lx) + map.at(c, y1, x1) * lx;
    top * (1.0 - ly) + bottom * ly
}

/// ROI-Align style crop to a `size x size` grid with one bilinear sample at
/// the center of each output bin. The box is first clamped to the map domain.
///
/// The result is channel-major: `out[(c * size + i) * size + j]`.
pub fn roi_crop<M: MapView + ?Sized>(map: &M, b: &BBox, size: usize) -> Result<Vec<f64>> {
    if size == 0 {
        return Err(Error::validation("crop resolution must be positive"));
    }
    let (w, h) = (map.width() as f64, map.height() as f64);
    let x1 = b.x1.clamp(0.0, w);
    let x2 = b.x2.clamp(0.0, w);
    let y1 = b.y1.clamp(0.0, h);
    let y2 = b.y2.clamp(0.0, h);
    if x2 <= x1 || y2 <= y1 {
        return Err(Error::validation(format!(
            "box {:?} has no area inside the {}x{} map",
            b.coords(),
            map.width(),
            map.height()
        )));
    }
    let bin_w = (x2 - x1) / size as f64;
    let bin_h = (y2 - y1) / size as f64;
    let mut out = Vec::with_capacity(map.channels() * size * size);
    for c in 0..map.channels() {
        for i in 0..size {
            let y = y1 + (i as f64 + 0.5) * bin_h;
            for j in 0..size {
                let x = x1 + (j as f64 + 0.5) * bin_w;
                out.push(bilinear(map, c, x, y));
            }
        }
    }
    Ok(out)
}

/// Three `size x size` channels rendered in union-box coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMapStack {
    pub size: usize,
    pub human_mask: Vec<f64>,
    pub object_mask: Vec<f64>,
    pub skeleton: Vec<f64>,
}

impl SpatialMapStack {
    pub fn build(human: &BBox, object: &BBox, kps: Option<&KeypointSet>, size: usize) -> Self {
        let (human_mask, object_mask) = pair_masks(human, object, size);
        let union = crate::geometry::union_box(human, object);
        let skeleton = match kps {
            Some(k) => skeleton_map(k, &union, size),
            None => vec![0.0; size * size],
        };
        SpatialMapStack {
            size,
            human_mask,
            object_mask,
            skeleton,
        }
    }

    /// Channel-major concatenation: human mask, object mask, skeleton.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.size * self.size);
        out.extend_from_slice(&self.human_mask);
        out.extend_from_slice(&self.object_mask);
        out.extend_from_slice(&self.skeleton);
        out
    }
}

/// Binary masks of the two boxes after mapping the union box onto a
/// `size x size` grid. A cell is set when its center falls inside the box.
pub fn pair_masks(human: &BBox, object: &BBox, size: usize) -> (Vec<f64>, Vec<f64>) {
    let union = crate::geometry::union_box(human, object);
    let sx = union.width() / size as f64;
    let sy = union.height() / size as f64;
    let render = |b: &BBox| {
        let mut out = vec![0.0; size * size];
        for i in 0..size {
            let y = union.y1 + (i as f64 + 0.5) * sy;
            for j in 0..size {
                let x = union.x1 + (j as f64 + 0.5) * sx;
                if b.contains_point(x, y) {
                    out[i * size + j] = 1.0;
                }
            }
        }
        out
    };
    (render(human), render(object))
}

/// Intensity of skeleton edge `e`, evenly spaced over [0.05, 0.95].
pub fn skeleton_intensity(edge: usize) -> f64 {
    let step = (SKELETON_MAX_INTENSITY - SKELETON_MIN_INTENSITY) / (COCO_SKELETON.len() - 1) as f64;
    SKELETON_MIN_INTENSITY + edge as f64 * step
}

/// Renders the 19-edge skeleton as 1-cell-wide lines on the union grid.
/// Later edges overwrite earlier ones; edges touching an invisible keypoint are skipped.
pub fn skeleton_map(kps: &KeypointSet, union: &BBox, size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let to_cell = |(x, y): (f64, f64)| -> (i64, i64) {
        let gx = (x - union.x1) * size as f64 / union.width();
        let gy = (y - union.y1) * size as f64 / union.height();
        (gx.floor() as i64, gy.floor() as i64)
    };
    for (e, &(a, b)) in COCO_SKELETON.iter().enumerate() {
        if !(kps.visible[a] && kps.visible[b]) {
            continue;
        }
        let value = skeleton_intensity(e);
        let (x0, y0) = to_cell(kps.points[a]);
        let (x1, y1) = to_cell(kps.points[b]);
        for (x, y) in bresenham(x0, y0, x1, y1) {
            if (0..size as i64).contains(&x) && (0..size as i64).contains(&y) {
                out[y as usize * size + x as usize] = value;
            }
        }
    }
    out
}

fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    let mut cells = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        cells.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    cells
}
