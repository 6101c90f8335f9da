//! End-to-end wiring: encode pairs, score them, fuse, select, regroup.

use std::collections::HashMap;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::IOU_THRESHOLD;
use crate::features::{encode_pair, ImageInstances, SceneFeatureMap};
use crate::formats::{AnnotationFile, DetectionFile, DetectionRecord, ScoreFixture};
use crate::geometry::{iou, BBox};
use crate::head::{HeadParams, LabeledPair, PairLabels};
use crate::regroup::{exclusive_regroup, max_object_select, Assignment, ExclusivePrior, HoiTriplet, ScoreTensor};

/// Source of per-pair action and interactiveness scores.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    Head(&'a HeadParams),
    Fixture(&'a ScoreFixture),
}

impl Scorer<'_> {
    pub fn num_actions(&self) -> usize {
        match self {
            Scorer::Head(p) => p.dims.num_actions,
            Scorer::Fixture(f) => f.num_actions(),
        }
    }
}

/// Fused score tensor of one image.
pub fn score_image(
    rec: &DetectionRecord,
    person: Option<u32>,
    scorer: Scorer<'_>,
    cfg: &Config,
) -> Result<ScoreTensor> {
    let humans = rec.humans(person);
    let objects = rec.objects(person);
    let (nh, no, na) = (humans.len(), objects.len(), scorer.num_actions());
    let human_scores = humans.iter().map(|i| i.bbox.score).collect();
    let object_scores = objects.iter().map(|i| i.bbox.score).collect();
    let (action, inter) = match scorer {
        Scorer::Fixture(fixture) => match fixture.get(&rec.image_id) {
            Some(s) => {
                if (s.num_humans, s.num_objects) != (nh, no) {
                    return Err(Error::validation(format!(
                        "image {}: score fixture covers {}x{} pairs but detections give {nh}x{no}",
                        rec.image_id, s.num_humans, s.num_objects
                    )));
                }
                (s.action.clone(), s.interactiveness.clone())
            }
            None if nh * no == 0 => (Vec::new(), Vec::new()),
            None => {
                return Err(Error::validation(format!(
                    "image {}: missing from score fixture",
                    rec.image_id
                )));
            }
        },
        Scorer::Head(params) => {
            let mut action = Vec::with_capacity(nh * no * na);
            let mut inter = Vec::with_capacity(nh * no);
            if nh * no > 0 {
                let inst = ImageInstances::new(rec, person, cfg)?;
                let map = SceneFeatureMap::for_record(rec, cfg)?;
                for h in 0..nh {
                    for o in 0..no {
                        let f = encode_pair(&map, &inst, h, o, cfg, &params.dims)?;
                        let s = params.forward(&f)?;
                        action.extend(s.action);
                        inter.push(s.interactiveness);
                    }
                }
            }
            (action, inter)
        }
    };
    ScoreTensor::from_factors(na, action, inter, human_scores, object_scores)
        .map_err(|e| Error::validation(format!("image {}: {e}", rec.image_id)))
}

/// Max-object selection followed, unless disabled, by exclusive regrouping.
pub fn postprocess(scores: &ScoreTensor, prior: &ExclusivePrior, cfg: &Config) -> Result<Vec<Assignment>> {
    let initial = max_object_select(scores);
    if cfg.regroup {
        exclusive_regroup(scores, &initial, prior, &cfg.regroup_config())
    } else {
        Ok(initial)
    }
}

pub fn to_triplets(rec: &DetectionRecord, person: Option<u32>, assignments: &[Assignment]) -> Vec<HoiTriplet> {
    let humans = rec.humans(person);
    let objects = rec.objects(person);
    assignments
        .iter()
        .map(|a| HoiTriplet {
            image_id: rec.image_id.clone(),
            human: humans[a.human].bbox,
            action: a.action,
            object: a.object.map(|o| objects[o].bbox),
            score: a.score,
        })
        .collect()
}

/// Runs every image through scoring and post-processing. Detections are
/// expected to be threshold-filtered already.
pub fn run_inference(
    dets: &DetectionFile,
    scorer: Scorer<'_>,
    prior: &ExclusivePrior,
    cfg: &Config,
) -> Result<Vec<HoiTriplet>> {
    cfg.validate()?;
    let person = dets.person_category();
    let mut out = Vec::new();
    for rec in &dets.images {
        let scores = score_image(rec, person, scorer, cfg)?;
        let assignments = postprocess(&scores, prior, cfg)?;
        out.extend(to_triplets(rec, person, &assignments));
    }
    Ok(out)
}

/// Labels every detected pair with the actions of ground-truth pairs whose
/// human and object boxes both overlap it with IoU >= 0.5. Images without
/// annotations are skipped.
pub fn build_training_pairs(dets: &DetectionFile, ann: &AnnotationFile, cfg: &Config) -> Result<Vec<LabeledPair>> {
    let num_actions = ann.actions.len();
    let dims = cfg.head_dims(num_actions);
    dims.validate()?;
    let person = dets.person_category();
    let mut gt_pairs: HashMap<String, Vec<(BBox, BBox, usize)>> = HashMap::new();
    for g in ann.ground_truth() {
        if let Some(o) = g.object {
            gt_pairs
                .entry(g.image_id)
                .or_default()
                .push((g.human, o, g.action as usize));
        }
    }
    let mut out = Vec::new();
    for rec in &dets.images {
        let Some(gts) = gt_pairs.get(rec.image_id.as_str()) else {
            continue;
        };
        let inst = ImageInstances::new(rec, person, cfg)?;
        if inst.num_pairs() == 0 {
            continue;
        }
        let map = SceneFeatureMap::for_record(rec, cfg)?;
        for h in 0..inst.humans.len() {
            for o in 0..inst.objects.len() {
                let (hb, ob) = (&inst.humans[h].bbox, &inst.objects[o].bbox);
                let ids: Vec<usize> = gts
                    .iter()
                    .filter(|(gh, go, _)| iou(hb, gh) >= IOU_THRESHOLD && iou(ob, go) >= IOU_THRESHOLD)
                    .map(|&(_, _, a)| a)
                    .collect();
                out.push(LabeledPair {
                    features: encode_pair(&map, &inst, h, o, cfg, &dims)?,
                    labels: PairLabels::from_action_ids(num_actions, &ids)?,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{ImageScores, Instance};
    use crate::geometry::{KeypointSet, PolygonMask};
    use crate::regroup::PriorEntry;

    fn inst(x1: f64, y1: f64, x2: f64, y2: f64, score: f64, cat: u32) -> Instance {
        let bbox = BBox::with_score(x1, y1, x2, y2, score, cat).unwrap();
        Instance {
            bbox,
            keypoints: (cat == 0).then(KeypointSet::invisible),
            segmentation: (cat != 0).then(|| PolygonMask::rectangle(&bbox)),
        }
    }

    fn two_by_two() -> DetectionFile {
        DetectionFile {
            categories: vec!["person".into(), "skis".into()],
            images: vec![DetectionRecord {
                image_id: "f".into(),
                width: 100,
                height: 100,
                instances: vec![
                    inst(10.0, 10.0, 30.0, 60.0, 1.0, 0),
                    inst(50.0, 10.0, 70.0, 60.0, 1.0, 0),
                    inst(5.0, 60.0, 35.0, 70.0, 1.0, 1),
                    inst(45.0, 60.0, 75.0, 70.0, 1.0, 1),
                ],
            }],
        }
    }

    fn ski_fixture() -> ScoreFixture {
        ScoreFixture {
            actions: vec!["ski".into()],
            images: vec![ImageScores {
                image_id: "f".into(),
                num_humans: 2,
                num_objects: 2,
                action: vec![0.9, 0.3, 0.8, 0.6],
                interactiveness: vec![1.0; 4],
            }],
        }
    }

    fn ski_prior() -> ExclusivePrior {
        ExclusivePrior {
            actions: [(
                0,
                PriorEntry {
                    q_e: 20,
                    q_s: 0,
                    exclusive: true,
                },
            )]
            .into_iter()
            .collect(),
        }
    }

    #[test]
    fn fixture_scene_is_regrouped() {
        let dets = two_by_two();
        let fixture = ski_fixture();
        let out = run_inference(&dets, Scorer::Fixture(&fixture), &ski_prior(), &Config::default()).unwrap();
        let pairs: Vec<(f64, f64, f64)> = out
            .iter()
            .map(|t| (t.human.x1, t.object.unwrap().x1, t.score))
            .collect();
        assert_eq!(pairs, vec![(10.0, 5.0, 0.9), (50.0, 45.0, 0.6)]);

        let cfg = Config {
            regroup: false,
            ..Config::default()
        };
        let out = run_inference(&dets, Scorer::Fixture(&fixture), &ski_prior(), &cfg).unwrap();
        assert!(out.iter().all(|t| t.object.unwrap().x1 == 5.0));
    }

    #[test]
    fn empty_and_single_pair_images() {
        let mut dets = two_by_two();
        dets.images[0].instances.retain(|i| i.bbox.category != 0);
        let fixture = ScoreFixture {
            actions: vec!["a".into(), "b".into(), "c".into()],
            images: vec![],
        };
        let out = run_inference(
            &dets,
            Scorer::Fixture(&fixture),
            &ExclusivePrior::default(),
            &Config::default(),
        )
        .unwrap();
        assert!(out.is_empty());

        let mut dets = two_by_two();
        dets.images[0].instances.remove(1);
        dets.images[0].instances.remove(2);
        let fixture = ScoreFixture {
            actions: vec!["a".into(), "b".into(), "c".into()],
            images: vec![ImageScores {
                image_id: "f".into(),
                num_humans: 1,
                num_objects: 1,
                action: vec![0.1, 0.2, 0.3],
                interactiveness: vec![0.5],
            }],
        };
        let out = run_inference(
            &dets,
            Scorer::Fixture(&fixture),
            &ExclusivePrior::default(),
            &Config::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn fixture_shape_mismatch_is_error() {
        let dets = two_by_two();
        let mut fixture = ski_fixture();
        fixture.images[0].num_objects = 3;
        assert!(run_inference(&dets, Scorer::Fixture(&fixture), &ski_prior(), &Config::default()).is_err());
    }
}
