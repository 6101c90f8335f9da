//! On-disk formats: detections, annotations, triplet results, score
//! fixtures (all JSON), and a flat little-endian float32 tensor container.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::GtTriplet;
use crate::geometry::{BBox, KeypointSet, PolygonMask};
use crate::head::{HeadDims, HeadParams};
use crate::regroup::{ActionId, HoiTriplet, PairInstance};

pub const PERSON: &str = "person";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Detections

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    category: String,
    bbox: [f64; 4],
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keypoints: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segmentation: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetectionRecord {
    image_id: String,
    width: u32,
    height: u32,
    instances: Vec<RawInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetectionFile {
    categories: Vec<String>,
    images: Vec<RawDetectionRecord>,
}

/// A detected instance. `bbox.category` indexes the file's category list.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub bbox: BBox,
    pub keypoints: Option<KeypointSet>,
    pub segmentation: Option<PolygonMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<Instance>,
}

/// Detections for a set of images plus their category vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFile {
    pub categories: Vec<String>,
    pub images: Vec<DetectionRecord>,
}

impl DetectionFile {
    pub fn person_category(&self) -> Option<u32> {
        self.categories.iter().position(|c| c == PERSON).map(|i| i as u32)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawDetectionFile = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawDetectionFile) -> Result<Self> {
        let index: HashMap<&str, u32> = raw
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i as u32))
            .collect();
        let mut seen = HashSet::new();
        let mut images = Vec::with_capacity(raw.images.len());
        for rec in &raw.images {
            if !seen.insert(rec.image_id.as_str()) {
                return Err(Error::validation(format!("duplicate image id {}", rec.image_id)));
            }
            let mut instances = Vec::with_capacity(rec.instances.len());
            for (i, inst) in rec.instances.iter().enumerate() {
                let locus = || format!("image {} instance {i}", rec.image_id);
                let &category = index
                    .get(inst.category.as_str())
                    .ok_or_else(|| Error::validation(format!("{}: unknown category {:?}", locus(), inst.category)))?;
                let [x1, y1, x2, y2] = inst.bbox;
                let bbox = BBox::with_score(x1, y1, x2, y2, inst.score, category)
                    .map_err(|e| Error::validation(format!("{}: {e}", locus())))?;
                let keypoints = inst
                    .keypoints
                    .as_deref()
                    .map(KeypointSet::from_coco)
                    .transpose()
                    .map_err(|e| Error::validation(format!("{}: {e}", locus())))?;
                let segmentation = inst
                    .segmentation
                    .as_deref()
                    .map(PolygonMask::from_flat)
                    .transpose()
                    .map_err(|e| Error::validation(format!("{}: {e}", locus())))?;
                instances.push(Instance {
                    bbox,
                    keypoints,
                    segmentation,
                });
            }
            images.push(DetectionRecord {
                image_id: rec.image_id.clone(),
                width: rec.width,
                height: rec.height,
                instances,
            });
        }
        Ok(DetectionFile {
            categories: raw.categories,
            images,
        })
    }

    fn to_raw(&self) -> RawDetectionFile {
        RawDetectionFile {
            categories: self.categories.clone(),
            images: self
                .images
                .iter()
                .map(|rec| RawDetectionRecord {
                    image_id: rec.image_id.clone(),
                    width: rec.width,
                    height: rec.height,
                    instances: rec
                        .instances
                        .iter()
                        .map(|inst| RawInstance {
                            category: self.categories[inst.bbox.category as usize].clone(),
                            bbox: inst.bbox.coords(),
                            score: inst.bbox.score,
                            keypoints: inst.keypoints.as_ref().map(KeypointSet::to_coco),
                            segmentation: inst.segmentation.as_ref().map(PolygonMask::to_flat),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_raw())?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_raw())
    }

    /// Drops humans at or below `human_threshold` and objects at or below `object_threshold`.
    pub fn filter(&mut self, cfg: &Config) {
        let person = self.person_category();
        for rec in &mut self.images {
            rec.instances.retain(|inst| {
                if Some(inst.bbox.category) == person {
                    inst.bbox.score > cfg.human_threshold
                } else {
                    inst.bbox.score > cfg.object_threshold
                }
            });
        }
    }
}

impl DetectionRecord {
    pub fn humans(&self, person: Option<u32>) -> Vec<&Instance> {
        self.instances
            .iter()
            .filter(|i| Some(i.bbox.category) == person)
            .collect()
    }

    pub fn objects(&self, person: Option<u32>) -> Vec<&Instance> {
        self.instances
            .iter()
            .filter(|i| Some(i.bbox.category) != person)
            .collect()
    }
}

/// Reads, validates, and threshold-filters a detection file.
pub fn load_detections(path: &Path, cfg: &Config) -> Result<DetectionFile> {
    let raw: RawDetectionFile = read_json(path)?;
    let mut file = DetectionFile::from_raw(raw)?;
    file.filter(cfg);
    Ok(file)
}

// ---------------------------------------------------------------------------
// Annotations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedInstance {
    pub id: u64,
    pub category: String,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedTriplet {
    pub human: u64,
    pub action: ActionId,
    #[serde(default)]
    pub object: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub instances: Vec<AnnotatedInstance>,
    pub triplets: Vec<AnnotatedTriplet>,
}

/// Ground-truth triplets referencing per-image instance ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    /// Action names; a triplet's `action` indexes this list.
    pub actions: Vec<String>,
    pub images: Vec<AnnotationRecord>,
}

impl AnnotationFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file: AnnotationFile = read_json(path)?;
        file.validate()?;
        Ok(file)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: AnnotationFile = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        let mut images = HashSet::new();
        for rec in &self.images {
            if !images.insert(rec.image_id.as_str()) {
                return Err(Error::validation(format!("duplicate image id {}", rec.image_id)));
            }
            let mut ids = HashSet::new();
            for inst in &rec.instances {
                if !ids.insert(inst.id) {
                    return Err(Error::validation(format!(
                        "image {}: duplicate instance id {}",
                        rec.image_id, inst.id
                    )));
                }
                let [x1, y1, x2, y2] = inst.bbox;
                BBox::new(x1, y1, x2, y2)
                    .map_err(|e| Error::validation(format!("image {} instance {}: {e}", rec.image_id, inst.id)))?;
            }
            for (t, trip) in rec.triplets.iter().enumerate() {
                let locus = format!("image {} triplet {t}", rec.image_id);
                if trip.action as usize >= self.actions.len() {
                    return Err(Error::validation(format!("{locus}: unknown action {}", trip.action)));
                }
                for id in std::iter::once(trip.human).chain(trip.object) {
                    if !ids.contains(&id) {
                        return Err(Error::validation(format!("{locus}: unknown instance id {id}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn action_ids(&self) -> Vec<ActionId> {
        (0..self.actions.len() as ActionId).collect()
    }

    pub fn ground_truth(&self) -> Vec<GtTriplet> {
        let mut out = Vec::new();
        for rec in &self.images {
            let boxes: HashMap<u64, BBox> = rec
                .instances
                .iter()
                .map(|i| {
                    let [x1, y1, x2, y2] = i.bbox;
                    (i.id, BBox::new(x1, y1, x2, y2).expect("validated"))
                })
                .collect();
            for t in &rec.triplets {
                out.push(GtTriplet {
                    image_id: rec.image_id.clone(),
                    human: boxes[&t.human],
                    action: t.action,
                    object: t.object.map(|o| boxes[&o]),
                });
            }
        }
        out
    }

    /// Human-object pairs with instance identities; agent-only triplets are skipped.
    pub fn pair_instances(&self) -> Vec<PairInstance<'_>> {
        self.images
            .iter()
            .flat_map(|rec| {
                rec.triplets.iter().filter_map(move |t| {
                    t.object.map(|object| PairInstance {
                        image: rec.image_id.as_str(),
                        human: t.human,
                        object,
                        action: t.action,
                    })
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Triplet results

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTriplet {
    image_id: String,
    human: BBox,
    action: ActionId,
    #[serde(default)]
    object: Option<BBox>,
    score: f64,
}

/// Output of `infer`, input of `eval` and `visualize`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletFile {
    pub actions: Vec<String>,
    pub detections: Vec<HoiTriplet>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTripletFile {
    actions: Vec<String>,
    detections: Vec<RawTriplet>,
}

impl TripletFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_raw())?)
    }

    fn to_raw(&self) -> RawTripletFile {
        RawTripletFile {
            actions: self.actions.clone(),
            detections: self
                .detections
                .iter()
                .map(|t| RawTriplet {
                    image_id: t.image_id.clone(),
                    human: t.human,
                    action: t.action,
                    object: t.object,
                    score: t.score,
                })
                .collect(),
        }
    }

    fn from_raw(raw: RawTripletFile) -> Result<Self> {
        let mut detections = Vec::with_capacity(raw.detections.len());
        for (i, t) in raw.detections.into_iter().enumerate() {
            let locus = |e: Error| Error::validation(format!("detection {i}: {e}"));
            t.human.validate().map_err(locus)?;
            if let Some(o) = &t.object {
                o.validate().map_err(locus)?;
            }
            if !(0.0..=1.0).contains(&t.score) {
                return Err(Error::validation(format!(
                    "detection {i}: score {} outside [0, 1]",
                    t.score
                )));
            }
            if t.action as usize >= raw.actions.len() {
                return Err(Error::validation(format!("detection {i}: unknown action {}", t.action)));
            }
            detections.push(HoiTriplet {
                image_id: t.image_id,
                human: t.human,
                action: t.action,
                object: t.object,
                score: t.score,
            });
        }
        Ok(TripletFile {
            actions: raw.actions,
            detections,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_raw(read_json(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_raw())
    }
}

// ---------------------------------------------------------------------------
// Score fixtures

/// Precomputed head outputs for one image, indexed over the image's humans
/// and objects in detection-file order (after threshold filtering).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageScores {
    pub image_id: String,
    pub num_humans: usize,
    pub num_objects: usize,
    /// `[h][o][a]`, flattened.
    pub action: Vec<f64>,
    /// `[h][o]`, flattened.
    pub interactiveness: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFixture {
    pub actions: Vec<String>,
    pub images: Vec<ImageScores>,
}

impl ScoreFixture {
    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageScores> {
        self.images.iter().find(|s| s.image_id == image_id)
    }
}

// ---------------------------------------------------------------------------
// Tensor container: b"HOIT", u32 version, u32 count, then per tensor
// u32 name length, UTF-8 name, u32 rank, u32 dims, f32 values. All little-endian.

const TENSOR_MAGIC: &[u8; 4] = b"HOIT";
const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Self {
        Tensor {
            name: name.into(),
            shape,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }
}

pub fn encode_tensors(tensors: &[Tensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(Error::Shape(format!(
                "tensor {} has {} values for shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            )));
        }
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let truncated = || Error::validation("tensor file is truncated");
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::validation("not a tensor file (bad magic)"));
    }
    let mut reader = std::io::Cursor::new(bytes);
    reader.set_position(4);
    let read_u32 = |r: &mut std::io::Cursor<&[u8]>| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| truncated())?;
        Ok(u32::from_le_bytes(b))
    };
    let version = read_u32(&mut reader)?;
    if version != TENSOR_VERSION {
        return Err(Error::validation(format!("unsupported tensor file version {version}")));
    }
    let count = read_u32(&mut reader)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut reader)? as usize;
        let mut name = vec![0u8; name_len];
        reader.read_exact(&mut name).map_err(|_| truncated())?;
        let name = String::from_utf8(name).map_err(|_| Error::validation("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut reader)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut reader).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        reader.read_exact(&mut raw).map_err(|_| truncated())?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    if (reader.position() as usize) != bytes.len() {
        return Err(Error::validation("trailing bytes after last tensor"));
    }
    Ok(tensors)
}

pub fn write_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let bytes = encode_tensors(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes)
}

/// JSON sidecar describing a tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsManifest {
    pub format: String,
    pub dims: HeadDims,
    pub actions: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

/// `params.bin` -> `params.json`.
pub fn manifest_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn params_to_tensors(params: &HeadParams) -> Vec<Tensor> {
    params
        .tensors()
        .into_iter()
        .map(|(name, shape, data)| Tensor::from_f64(name, shape, data))
        .collect()
}

pub fn params_from_tensors(dims: HeadDims, tensors: &[Tensor]) -> Result<HeadParams> {
    let mut params = HeadParams::zeros(dims)?;
    let by_name: BTreeMap<&str, &Tensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    if by_name.len() != expected.len() {
        return Err(Error::validation(format!(
            "parameter file has {} tensors, expected {}",
            by_name.len(),
            expected.len()
        )));
    }
    for ((name, shape), dst) in expected.iter().zip(params.tensors_mut()) {
        let t = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::validation(format!("parameter tensor {name} missing")))?;
        if &t.shape != shape {
            return Err(Error::Shape(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        for (d, &v) in dst.iter_mut().zip(&t.data) {
            *d = v as f64;
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameter file"));
    }
    Ok(params)
}

/// Writes `path` (tensors) and its JSON manifest next to it.
pub fn save_params(path: &Path, params: &HeadParams, actions: &[String]) -> Result<()> {
    let tensors = params_to_tensors(params);
    let manifest = ParamsManifest {
        format: "hoi-head-params/1".into(),
        dims: params.dims,
        actions: actions.to_vec(),
        tensors: tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    write_tensors(path, &tensors)?;
    write_json(&manifest_path(path), &manifest)
}

pub fn load_params(path: &Path) -> Result<(HeadParams, ParamsManifest)> {
    let manifest: ParamsManifest = read_json(&manifest_path(path))?;
    let tensors = read_tensors(path)?;
    let params = params_from_tensors(manifest.dims, &tensors)?;
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DETS: &str = r#"{
        "categories": ["person", "skis"],
        "images": [{
            "image_id": "a", "width": 100, "height": 80,
            "instances": [
                {"category": "person", "bbox": [10, 10, 30, 60], "score": 0.9},
                {"category": "person", "bbox": [40, 10, 60, 60], "score": 0.49},
                {"category": "skis", "bbox": [5, 55, 35, 65], "score": 0.45,
                 "segmentation": [[5, 55, 35, 55, 35, 65, 5, 65]]},
                {"category": "skis", "bbox": [45, 55, 70, 65], "score": 0.4}
            ]
        }]
    }"#;

    #[test]
    fn thresholds_filter_instances() {
        let mut f = DetectionFile::parse(DETS).unwrap();
        f.filter(&Config::default());
        let rec = &f.images[0];
        let person = f.person_category();
        assert_eq!(rec.humans(person).len(), 1);
        assert_eq!(rec.objects(person).len(), 1);
        assert_eq!(rec.objects(person)[0].bbox.score, 0.45);
    }

    #[test]
    fn detection_errors_name_the_instance() {
        let bad_box = DETS.replace("[40, 10, 60, 60]", "[60, 10, 40, 60]");
        let err = DetectionFile::parse(&bad_box).unwrap_err().to_string();
        assert!(err.contains("image a instance 1"), "{err}");

        let bad_cat = DETS.replace("\"skis\", \"bbox\": [45", "\"sled\", \"bbox\": [45");
        let err = DetectionFile::parse(&bad_cat).unwrap_err().to_string();
        assert!(err.contains("unknown category") && err.contains("instance 3"), "{err}");

        let empty = DetectionFile::parse(r#"{"categories": [], "images": []}"#).unwrap();
        assert!(empty.images.is_empty());
    }

    #[test]
    fn detection_json_roundtrip() {
        let f = DetectionFile::parse(DETS).unwrap();
        assert_eq!(DetectionFile::parse(&f.to_json().unwrap()).unwrap(), f);
    }

    #[test]
    fn annotation_validation() {
        let good = r#"{"actions": ["ski"], "images": [{"image_id": "a",
            "instances": [{"id": 1, "category": "person", "bbox": [0,0,10,20]},
                          {"id": 2, "category": "skis", "bbox": [0,15,10,25]}],
            "triplets": [{"human": 1, "action": 0, "object": 2}, {"human": 1, "action": 0}]}]}"#;
        let a = AnnotationFile::parse(good).unwrap();
        assert_eq!(a.ground_truth().len(), 2);
        assert_eq!(a.pair_instances().len(), 1);
        assert!(AnnotationFile::parse(&good.replace("\"object\": 2", "\"object\": 3")).is_err());
        assert!(
            AnnotationFile::parse(&good.replace("\"action\": 0, \"object\"", "\"action\": 1, \"object\"")).is_err()
        );
    }

    #[test]
    fn tensor_container_rejects_garbage() {
        let t = Tensor {
            name: "x".into(),
            shape: vec![2, 3],
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        let bytes = encode_tensors(std::slice::from_ref(&t)).unwrap();
        assert_eq!(&bytes[..4], b"HOIT");
        assert_eq!(decode_tensors(&bytes).unwrap(), vec![t.clone()]);
        assert!(decode_tensors(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_tensors(b"NOPE").is_err());
        let bad = Tensor { shape: vec![4], ..t };
        assert!(encode_tensors(&[bad]).is_err());
    }
}
