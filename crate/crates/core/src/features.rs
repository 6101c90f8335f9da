//! Per-pair feature encoding over a procedural image feature map.
//!
//! No backbone runs here. Each image gets a deterministic stand-in feature
//! map: every pixel carries the sum of category embeddings of the instances
//! covering it plus a small hashed noise term.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::formats::{DetectionRecord, Instance};
use crate::geometry::{
    generate_human_parts, generate_object_parts, rasterize, union_box, BBox, HumanParts, ObjectParts,
};
use crate::head::{HeadDims, PairFeatures};
use crate::spatial::{roi_crop, MapView, OffsetScale, SpatialMapStack};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [-1, 1) from a hashed key.
fn hash_unit(parts: &[u64]) -> f64 {
    let h = parts.iter().fold(0u64, |acc, &p| splitmix(acc ^ p));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Deterministic stand-in for a backbone feature map, evaluated lazily.
#[derive(Debug, Clone)]
pub struct SceneFeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    boxes: Vec<BBox>,
    seed: u64,
    noise: f64,
}

impl SceneFeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, boxes: Vec<BBox>, seed: u64, noise: f64) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::validation("feature map dimensions must be positive"));
        }
        Ok(SceneFeatureMap {
            channels,
            height,
            width,
            boxes,
            seed,
            noise,
        })
    }

    pub fn for_record(rec: &DetectionRecord, cfg: &Config) -> Result<Self> {
        Self::new(
            cfg.channels,
            rec.height as usize,
            rec.width as usize,
            rec.instances.iter().map(|i| i.bbox).collect(),
            cfg.feature_seed,
            cfg.feature_noise,
        )
        .map_err(|e| Error::validation(format!("image {}: {e}", rec.image_id)))
    }

    /// Embedding of `category` in channel `c`.
    pub fn embedding(&self, category: u32, c: usize) -> f64 {
        hash_unit(&[self.seed, 1, category as u64, c as u64])
    }
}

impl MapView for SceneFeatureMap {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut v = self.noise * hash_unit(&[self.seed, 2, c as u64, y as u64, x as u64]);
        for b in &self.boxes {
            if b.contains_point(px, py) {
                v += self.embedding(b.category, c);
            }
        }
        v
    }
}

/// Lazy two-channel offset map: pixel-center coordinates minus `center`,
/// optionally divided by `norm`. Equal to one half of
/// [`crate::spatial::offset_maps`] without materializing it.
#[derive(Debug, Clone, Copy)]
pub struct OffsetView {
    pub height: usize,
    pub width: usize,
    pub center: (f64, f64),
    pub norm: f64,
}

impl OffsetView {
    pub fn new(
        height: usize,
        width: usize,
        center: (f64, f64),
        human: &BBox,
        object: &BBox,
        scale: OffsetScale,
    ) -> Self {
        let norm = match scale {
            OffsetScale::Pixels => 1.0,
            OffsetScale::UnionMaxSide => union_box(human, object).max_side(),
        };
        OffsetView {
            height,
            width,
            center,
            norm,
        }
    }
}

impl MapView for OffsetView {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn channels(&self) -> usize {
        2
    }
    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let d = if c == 0 {
            x as f64 + 0.5 - self.center.0
        } else {
            y as f64 + 0.5 - self.center.1
        };
        if self.norm == 1.0 {
            d
        } else {
            d / self.norm
        }
    }
}

/// Part crops fall back to zeros when the part box lies entirely outside the map.
fn crop_or_zeros<M: MapView + ?Sized>(map: &M, b: &BBox, size: usize) -> Vec<f64> {
    roi_crop(map, b, size).unwrap_or_else(|_| vec![0.0; map.channels() * size * size])
}

/// Per-instance geometry shared by every pair in an image.
#[derive(Debug, Clone)]
pub struct ImageInstances<'a> {
    pub humans: Vec<&'a Instance>,
    pub objects: Vec<&'a Instance>,
    human_parts: Vec<Option<HumanParts>>,
    object_parts: Vec<Option<ObjectParts>>,
}

impl<'a> ImageInstances<'a> {
    pub fn new(rec: &'a DetectionRecord, person: Option<u32>, cfg: &Config) -> Result<Self> {
        let humans = rec.humans(person);
        let objects = rec.objects(person);
        let locus = |kind: &str, i: usize| format!("image {} {kind} {i}", rec.image_id);
        let mut human_parts = Vec::with_capacity(humans.len());
        for (i, h) in humans.iter().enumerate() {
            human_parts.push(if cfg.use_keypoints {
                let kps = h.keypoints.as_ref().ok_or_else(|| {
                    Error::validation(format!(
                        "{}: keypoints required (or set use_keypoints=false)",
                        locus("human", i)
                    ))
                })?;
                Some(generate_human_parts(kps, &h.bbox, cfg.part_box_ratio))
            } else {
                None
            });
        }
        let mut object_parts = Vec::with_capacity(objects.len());
        for (i, o) in objects.iter().enumerate() {
            object_parts.push(if cfg.use_object_parts {
                let seg = o.segmentation.as_ref().ok_or_else(|| {
                    Error::validation(format!(
                        "{}: segmentation required (or set use_object_parts=false)",
                        locus("object", i)
                    ))
                })?;
                let wrap = |e: Error| Error::validation(format!("{}: {e}", locus("object", i)));
                let mask = rasterize(seg, &o.bbox).map_err(wrap)?;
                Some(generate_object_parts(&mask, &o.bbox, cfg.part_grid()).map_err(wrap)?)
            } else {
                None
            });
        }
        Ok(ImageInstances {
            humans,
            objects,
            human_parts,
            object_parts,
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.humans.len() * self.objects.len()
    }
}

/// Encodes the raw head inputs of human `h` and object `o`.
pub fn encode_pair<M: MapView + ?Sized>(
    map: &M,
    inst: &ImageInstances<'_>,
    h: usize,
    o: usize,
    cfg: &Config,
    dims: &HeadDims,
) -> Result<PairFeatures> {
    let human = inst.humans[h];
    let object = inst.objects[o];
    let (hb, ob) = (&human.bbox, &object.bbox);
    let union = union_box(hb, ob);
    let (dh, dp) = (dims.holistic_res, dims.part_res);
    let (height, width) = (map.height(), map.width());
    let to_object = OffsetView::new(height, width, ob.center(), hb, ob, cfg.offset_scale);
    let to_human = OffsetView::new(height, width, hb.center(), hb, ob, cfg.offset_scale);

    let mut f = PairFeatures::zeros(dims);
    f.human = roi_crop(map, hb, dh)?;
    f.object = roi_crop(map, ob, dh)?;
    f.union = roi_crop(map, &union, dh)?;
    let kps = if cfg.use_keypoints {
        human.keypoints.as_ref()
    } else {
        None
    };
    f.spatial = SpatialMapStack::build(hb, ob, kps, dims.spatial_res).flatten();

    if let Some(parts) = &inst.human_parts[h] {
        for (k, b) in parts.part_boxes.iter().enumerate() {
            if !parts.visible[k] {
                continue;
            }
            let mut v = crop_or_zeros(map, b, dp);
            v.extend(crop_or_zeros(&to_object, b, dp));
            f.human_parts[k] = v;
        }
    }
    let mut ho = roi_crop(map, ob, dp)?;
    ho.extend(roi_crop(&to_object, ob, dp)?);
    f.object_ho = ho;

    if let Some(parts) = &inst.object_parts[o] {
        for (k, b) in parts.part_boxes.iter().enumerate() {
            if parts.flags[k] {
                f.object_parts[k] = crop_or_zeros(&to_human, b, dp);
            }
        }
    }
    f.human_oh = roi_crop(&to_human, hb, dp)?;
    Ok(f)
}

/// All pairs of one image in human-major order.
pub fn encode_image(
    rec: &DetectionRecord,
    person: Option<u32>,
    cfg: &Config,
    dims: &HeadDims,
) -> Result<Vec<PairFeatures>> {
    let inst = ImageInstances::new(rec, person, cfg)?;
    if inst.num_pairs() == 0 {
        return Ok(Vec::new());
    }
    let map = SceneFeatureMap::for_record(rec, cfg)?;
    let mut out = Vec::with_capacity(inst.num_pairs());
    for h in 0..inst.humans.len() {
        for o in 0..inst.objects.len() {
            let f = encode_pair(&map, &inst, h, o, cfg, dims)
                .map_err(|e| Error::validation(format!("image {} pair ({h}, {o}): {e}", rec.image_id)))?;
            out.push(f);
        }
    }
    Ok(out)
}
