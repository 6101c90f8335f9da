//! Seeded synthetic scenes: a row of skiers, their skis, optional shared
//! sign and distractor balls, plus a score fixture whose corruption makes
//! some humans prefer a neighbour's skis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{
    AnnotatedInstance, AnnotatedTriplet, AnnotationFile, AnnotationRecord, DetectionFile, DetectionRecord, ImageScores,
    Instance, ScoreFixture,
};
use crate::geometry::{BBox, KeypointSet, PolygonMask, NUM_KEYPOINTS};

pub const ACTION_SKI: u32 = 0;
pub const ACTION_LOOK: u32 = 1;
pub const ACTIONS: [&str; 2] = ["ski-instr", "look-obj"];
pub const CATEGORIES: [&str; 4] = ["person", "skis", "sign", "ball"];

const CAT_PERSON: u32 = 0;
const CAT_SKIS: u32 = 1;
const CAT_SIGN: u32 = 2;
const CAT_BALL: u32 = 3;

const HUMAN_W: f64 = 40.0;
const HUMAN_H: f64 = 100.0;
const TOP: f64 = 40.0;

// Head outputs written to the score fixture.
const TRUE_ACTION: f64 = 0.9;
const CORRUPTED_TRUE_ACTION: f64 = 0.6;
const CORRUPTED_CROSS_ACTION: f64 = 0.75;
const LOOK_ACTION: f64 = 0.85;
const BACKGROUND_ACTION: f64 = 0.05;
const PAIR_INTERACTIVE: f64 = 0.95;
const SIGN_INTERACTIVE: f64 = 0.9;
const BACKGROUND_INTERACTIVE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub num_scenes: usize,
    pub seed: u64,
    /// Inclusive range of humans per scene.
    pub humans: [usize; 2],
    /// Inclusive range of non-shared objects (skis plus distractors) per scene.
    pub objects: [usize; 2],
    /// Adds one sign every human looks at.
    pub shared_object: bool,
    /// 0 spreads the humans out, 1 packs them shoulder to shoulder.
    pub crowding: f64,
    /// Probability that a human's scores favour a neighbour's skis.
    pub corruption: f64,
    /// Fraction of scenes with detection scores low enough that no conflict
    /// clears the default regrouping threshold.
    pub low_confidence: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            num_scenes: 10,
            seed: 0,
            humans: [2, 3],
            objects: [2, 4],
            shared_object: true,
            crowding: 0.5,
            corruption: 0.5,
            low_confidence: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let [hmin, hmax] = self.humans;
        let [omin, omax] = self.objects;
        if hmin == 0 || hmin > hmax {
            return Err(Error::validation(format!("invalid human range {:?}", self.humans)));
        }
        if omin > omax {
            return Err(Error::validation(format!("invalid object range {:?}", self.objects)));
        }
        if omax < hmax {
            return Err(Error::validation(format!(
                "up to {hmax} humans need exclusive objects but at most {omax} objects are allowed"
            )));
        }
        for (name, v) in [
            ("crowding", self.crowding),
            ("corruption", self.corruption),
            ("low_confidence", self.low_confidence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("scene spec {name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Detections, matching annotations, and head scores for a batch of scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScenes {
    pub detections: DetectionFile,
    pub annotations: AnnotationFile,
    pub scores: ScoreFixture,
}

/// Stick figure as fractions of the person box, COCO keypoint order.
const POSE: [(f64, f64); NUM_KEYPOINTS] = [
    (0.50, 0.08),
    (0.45, 0.06),
    (0.55, 0.06),
    (0.40, 0.08),
    (0.60, 0.08),
    (0.30, 0.22),
    (0.70, 0.22),
    (0.22, 0.38),
    (0.78, 0.38),
    (0.18, 0.52),
    (0.82, 0.52),
    (0.38, 0.55),
    (0.62, 0.55),
    (0.36, 0.75),
    (0.64, 0.75),
    (0.34, 0.95),
    (0.66, 0.95),
];

fn keypoints_for(b: &BBox) -> KeypointSet {
    let mut points = [(0.0, 0.0); NUM_KEYPOINTS];
    for (p, &(fx, fy)) in points.iter_mut().zip(POSE.iter()) {
        *p = (b.x1 + fx * b.width(), b.y1 + fy * b.height());
    }
    KeypointSet::new(points, [true; NUM_KEYPOINTS])
}

fn diamond(b: &BBox) -> PolygonMask {
    let (cx, cy) = b.center();
    PolygonMask {
        polygons: vec![vec![(cx, b.y1), (b.x2, cy), (cx, b.y2), (b.x1, cy)]],
    }
}

fn octagon(b: &BBox) -> PolygonMask {
    let (dx, dy) = (b.width() * 0.3, b.height() * 0.3);
    PolygonMask {
        polygons: vec![vec![
            (b.x1 + dx, b.y1),
            (b.x2 - dx, b.y1),
            (b.x2, b.y1 + dy),
            (b.x2, b.y2 - dy),
            (b.x2 - dx, b.y2),
            (b.x1 + dx, b.y2),
            (b.x1, b.y2 - dy),
            (b.x1, b.y1 + dy),
        ]],
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

struct Scene {
    record: DetectionRecord,
    annotation: AnnotationRecord,
    scores: ImageScores,
}

fn generate_one(spec: &SceneSpec, index: usize, rng: &mut ChaCha8Rng) -> Scene {
    let image_id = format!("scene_{index:04}");
    let n = rng.gen_range(spec.humans[0]..=spec.humans[1]);
    let m = rng.gen_range(spec.objects[0].max(n)..=spec.objects[1]);
    let low = rng.gen_bool(spec.low_confidence);
    let (human_range, object_range) = if low {
        ((0.55, 0.65), (0.5, 0.6))
    } else {
        ((0.9, 0.99), (0.85, 0.99))
    };
    let mut draw = |(lo, hi): (f64, f64)| round3(rng.gen_range(lo..hi));

    let gap = 4.0 + (1.0 - spec.crowding) * 60.0;
    let left = 20.0;
    let humans: Vec<BBox> = (0..n)
        .map(|i| {
            let x = left + i as f64 * (HUMAN_W + gap);
            BBox::with_score(x, TOP, x + HUMAN_W, TOP + HUMAN_H, draw(human_range), CAT_PERSON).expect("valid layout")
        })
        .collect();
    let skis: Vec<BBox> = humans
        .iter()
        .map(|h| {
            BBox::with_score(
                h.x1 - 5.0,
                h.y2 - 5.0,
                h.x2 + 5.0,
                h.y2 + 10.0,
                draw(object_range),
                CAT_SKIS,
            )
            .expect("valid layout")
        })
        .collect();
    let row_end = humans.last().map_or(left, |h| h.x2) + 10.0;
    let balls: Vec<BBox> = (0..m - n)
        .map(|k| {
            let x = left + k as f64 * 30.0;
            BBox::with_score(
                x,
                TOP + HUMAN_H + 30.0,
                x + 20.0,
                TOP + HUMAN_H + 50.0,
                draw(object_range),
                CAT_BALL,
            )
            .expect("valid layout")
        })
        .collect();
    let sign = spec.shared_object.then(|| {
        BBox::with_score(row_end, 5.0, row_end + 40.0, 35.0, draw(object_range), CAT_SIGN).expect("valid layout")
    });

    // Corrupted humans point at their nearest uncorrupted neighbour.
    let anchor = rng.gen_range(0..n);
    let corrupted: Vec<bool> = (0..n).map(|i| i != anchor && rng.gen_bool(spec.corruption)).collect();
    let target: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if !corrupted[i] {
                return None;
            }
            (0..n).filter(|&j| !corrupted[j]).min_by_key(|&j| (j.abs_diff(i), j))
        })
        .collect();

    // Object order: skis, balls, sign.
    let mut objects: Vec<(BBox, PolygonMask)> = skis.iter().map(|b| (*b, PolygonMask::rectangle(b))).collect();
    objects.extend(balls.iter().map(|b| (*b, octagon(b))));
    if let Some(s) = &sign {
        objects.push((*s, diamond(s)));
    }
    let sign_index = sign.map(|_| objects.len() - 1);

    let no = objects.len();
    let na = ACTIONS.len();
    let mut action = vec![BACKGROUND_ACTION; n * no * na];
    let mut inter = vec![BACKGROUND_INTERACTIVE; n * no];
    for i in 0..n {
        let at = |o: usize, a: u32| (i * no + o) * na + a as usize;
        action[at(i, ACTION_SKI)] = if corrupted[i] {
            CORRUPTED_TRUE_ACTION
        } else {
            TRUE_ACTION
        };
        inter[i * no + i] = PAIR_INTERACTIVE;
        if let Some(j) = target[i] {
            action[at(j, ACTION_SKI)] = CORRUPTED_CROSS_ACTION;
            inter[i * no + j] = PAIR_INTERACTIVE;
        }
        if let Some(s) = sign_index {
            action[at(s, ACTION_LOOK)] = LOOK_ACTION;
            inter[i * no + s] = SIGN_INTERACTIVE;
        }
    }

    let mut instances: Vec<Instance> = humans
        .iter()
        .map(|h| Instance {
            bbox: *h,
            keypoints: Some(keypoints_for(h)),
            segmentation: None,
        })
        .collect();
    instances.extend(objects.iter().map(|(b, poly)| Instance {
        bbox: *b,
        keypoints: None,
        segmentation: Some(poly.clone()),
    }));
    let width = (row_end + 50.0).max(left + 30.0 * (m - n) as f64 + 20.0).ceil() as u32;
    let height = (TOP + HUMAN_H + 60.0) as u32;

    let ann_instances = instances
        .iter()
        .enumerate()
        .map(|(k, inst)| AnnotatedInstance {
            id: k as u64 + 1,
            category: CATEGORIES[inst.bbox.category as usize].to_string(),
            bbox: inst.bbox.coords(),
        })
        .collect();
    let mut triplets = Vec::new();
    for i in 0..n {
        triplets.push(AnnotatedTriplet {
            human: i as u64 + 1,
            action: ACTION_SKI,
            object: Some((n + i) as u64 + 1),
        });
        if let Some(s) = sign_index {
            triplets.push(AnnotatedTriplet {
                human: i as u64 + 1,
                action: ACTION_LOOK,
                object: Some((n + s) as u64 + 1),
            });
        }
    }

    Scene {
        record: DetectionRecord {
            image_id: image_id.clone(),
            width,
            height,
            instances,
        },
        annotation: AnnotationRecord {
            image_id: image_id.clone(),
            instances: ann_instances,
            triplets,
        },
        scores: ImageScores {
            image_id,
            num_humans: n,
            num_objects: no,
            action,
            interactiveness: inter,
        },
    }
}

pub fn generate_scenes(spec: &SceneSpec) -> Result<GeneratedScenes> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let actions: Vec<String> = ACTIONS.iter().map(|s| s.to_string()).collect();
    let mut detections = DetectionFile {
        categories: CATEGORIES.iter().map(|s| s.to_string()).collect(),
        images: Vec::with_capacity(spec.num_scenes),
    };
    let mut annotations = AnnotationFile {
        actions: actions.clone(),
        images: Vec::with_capacity(spec.num_scenes),
    };
    let mut scores = ScoreFixture {
        actions,
        images: Vec::with_capacity(spec.num_scenes),
    };
    for index in 0..spec.num_scenes {
        let scene = generate_one(spec, index, &mut rng);
        detections.images.push(scene.record);
        annotations.images.push(scene.annotation);
        scores.images.push(scene.scores);
    }
    Ok(GeneratedScenes {
        detections,
        annotations,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::formats::PERSON;

    #[test]
    fn infeasible_spec_rejected() {
        let spec = SceneSpec {
            humans: [2, 4],
            objects: [1, 3],
            ..SceneSpec::default()
        };
        assert!(generate_scenes(&spec).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SceneSpec::default();
        let a = generate_scenes(&spec).unwrap();
        let b = generate_scenes(&spec).unwrap();
        assert_eq!(a.detections.to_json().unwrap(), b.detections.to_json().unwrap());
        assert_eq!(
            serde_json::to_string(&a.scores).unwrap(),
            serde_json::to_string(&b.scores).unwrap()
        );
        let c = generate_scenes(&SceneSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.detections, c.detections);
    }

    #[test]
    fn two_by_two_scene_is_one_to_one() {
        let spec = SceneSpec {
            num_scenes: 5,
            humans: [2, 2],
            objects: [2, 2],
            shared_object: false,
            ..SceneSpec::default()
        };
        let g = generate_scenes(&spec).unwrap();
        for rec in &g.annotations.images {
            let pairs: Vec<_> = rec.triplets.iter().map(|t| (t.human, t.object.unwrap())).collect();
            assert_eq!(pairs, vec![(1, 3), (2, 4)]);
        }
        g.annotations.validate().unwrap();
    }

    #[test]
    fn every_instance_survives_default_thresholds() {
        let spec = SceneSpec {
            num_scenes: 20,
            low_confidence: 0.5,
            ..SceneSpec::default()
        };
        let g = generate_scenes(&spec).unwrap();
        let mut filtered = g.detections.clone();
        filtered.filter(&Config::default());
        assert_eq!(filtered, g.detections);
        assert_eq!(g.detections.person_category(), Some(0));
        assert_eq!(CATEGORIES[0], PERSON);
        let reparsed = DetectionFile::parse(&g.detections.to_json().unwrap()).unwrap();
        assert_eq!(reparsed, g.detections);
    }
}
