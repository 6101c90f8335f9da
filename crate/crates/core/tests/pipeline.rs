use hoi_core::config::Config;
use hoi_core::eval::map_role;
use hoi_core::formats::{DetectionFile, DetectionRecord, Instance};
use hoi_core::geometry::{BBox, KeypointSet, PolygonMask};
use hoi_core::head::{HeadParams, PairLabels};
use hoi_core::pipeline::{build_training_pairs, run_inference, Scorer};
use hoi_core::regroup::{compute_exclusive_prior, ExclusivePrior, PriorEntry};
use hoi_core::scenes::{generate_scenes, SceneSpec};

fn small_config() -> Config {
    Config {
        channels: 3,
        holistic_res: 2,
        part_res: 2,
        spatial_res: 8,
        branch_width: 4,
        ho_width: 4,
        oh_width: 4,
        attention_hidden: 2,
        inter_hidden: 4,
        ..Config::default()
    }
}

/// A head whose outputs are ~1 for every pair, so fused scores reduce to s_h * s_o.
fn saturated_head(cfg: &Config, num_actions: usize) -> HeadParams {
    let mut p = HeadParams::zeros(cfg.head_dims(num_actions)).unwrap();
    p.inter.fc2.bias.iter_mut().for_each(|b| *b = 40.0);
    p.action.bias.iter_mut().for_each(|b| *b = 40.0);
    p
}

fn person(b: [f64; 4], score: f64) -> Instance {
    let bbox = BBox::with_score(b[0], b[1], b[2], b[3], score, 0).unwrap();
    let mut kps = KeypointSet::invisible();
    kps.points[0] = bbox.center();
    kps.visible[0] = true;
    Instance {
        bbox,
        keypoints: Some(kps),
        segmentation: None,
    }
}

fn thing(b: [f64; 4], score: f64) -> Instance {
    let bbox = BBox::with_score(b[0], b[1], b[2], b[3], score, 1).unwrap();
    Instance {
        bbox,
        keypoints: None,
        segmentation: Some(PolygonMask::rectangle(&bbox)),
    }
}

fn ski_prior() -> ExclusivePrior {
    ExclusivePrior {
        actions: [(
            0,
            PriorEntry {
                q_e: 10,
                q_s: 0,
                exclusive: true,
            },
        )]
        .into_iter()
        .collect(),
    }
}

#[test]
fn head_scored_scene_is_regrouped() {
    // Both humans prefer O1 (higher detection score); H1 keeps it, H2 moves to O2.
    let dets = DetectionFile {
        categories: vec!["person".into(), "skis".into()],
        images: vec![DetectionRecord {
            image_id: "fig".into(),
            width: 80,
            height: 80,
            instances: vec![
                person([5.0, 5.0, 25.0, 55.0], 0.9),
                person([45.0, 5.0, 65.0, 55.0], 0.8),
                thing([0.0, 55.0, 30.0, 65.0], 0.95),
                thing([40.0, 55.0, 70.0, 65.0], 0.7),
            ],
        }],
    };
    let cfg = small_config();
    let head = saturated_head(&cfg, 1);
    let out = run_inference(&dets, Scorer::Head(&head), &ski_prior(), &cfg).unwrap();
    let pairs: Vec<(f64, f64)> = out.iter().map(|t| (t.human.x1, t.object.unwrap().x1)).collect();
    assert_eq!(pairs, vec![(5.0, 0.0), (45.0, 40.0)]);
    assert!((out[0].score - 0.9 * 0.95).abs() < 1e-9);
    assert!((out[1].score - 0.8 * 0.7).abs() < 1e-9);

    let plain = Config {
        regroup: false,
        ..small_config()
    };
    let out = run_inference(&dets, Scorer::Head(&head), &ski_prior(), &plain).unwrap();
    assert!(out.iter().all(|t| t.object.unwrap().x1 == 0.0));
}

#[test]
fn inference_is_deterministic() {
    let g = generate_scenes(&SceneSpec {
        num_scenes: 3,
        ..SceneSpec::default()
    })
    .unwrap();
    let cfg = small_config();
    let head = HeadParams::init(cfg.head_dims(2), 11).unwrap();
    let prior = compute_exclusive_prior(g.annotations.pair_instances(), &g.annotations.action_ids(), cfg.beta).unwrap();
    let a = run_inference(&g.detections, Scorer::Head(&head), &prior, &cfg).unwrap();
    let b = run_inference(&g.detections, Scorer::Head(&head), &prior, &cfg).unwrap();
    assert_eq!(a, b);
    let nh: usize = g.detections.images.iter().map(|r| r.humans(Some(0)).len()).sum();
    // At most one triplet per (human, action).
    assert!(a.len() <= 2 * nh);
}

#[test]
fn uncorrupted_scenes_need_no_regrouping() {
    let g = generate_scenes(&SceneSpec {
        num_scenes: 30,
        corruption: 0.0,
        ..SceneSpec::default()
    })
    .unwrap();
    let cfg = Config::default();
    let prior = compute_exclusive_prior(g.annotations.pair_instances(), &g.annotations.action_ids(), cfg.beta).unwrap();
    let with = run_inference(&g.detections, Scorer::Fixture(&g.scores), &prior, &cfg).unwrap();
    let plain = Config {
        regroup: false,
        ..Config::default()
    };
    let without = run_inference(&g.detections, Scorer::Fixture(&g.scores), &prior, &plain).unwrap();
    assert_eq!(with, without);
    let m = map_role(&with, &g.annotations.ground_truth(), &g.annotations.action_ids()).unwrap();
    assert_eq!(m.map_role, 1.0);
}

#[test]
fn training_pairs_follow_ground_truth() {
    let g = generate_scenes(&SceneSpec {
        num_scenes: 2,
        humans: [2, 2],
        objects: [2, 2],
        shared_object: false,
        ..SceneSpec::default()
    })
    .unwrap();
    let pairs = build_training_pairs(&g.detections, &g.annotations, &small_config()).unwrap();
    assert_eq!(pairs.len(), 2 * 4);
    let labels: Vec<&PairLabels> = pairs.iter().map(|p| &p.labels).collect();
    // Human-major order: (h0,o0) and (h1,o1) ski, cross pairs negative.
    for (k, l) in labels.iter().enumerate() {
        let diagonal = matches!(k % 4, 0 | 3);
        assert_eq!(l.actions(), &[diagonal, false][..], "pair {k}");
    }
}

#[test]
fn missing_masks_are_reported_unless_disabled() {
    let mut g = generate_scenes(&SceneSpec {
        num_scenes: 1,
        ..SceneSpec::default()
    })
    .unwrap();
    let cfg = small_config();
    let head = HeadParams::init(cfg.head_dims(2), 1).unwrap();
    let last = g.detections.images[0].instances.last_mut().unwrap();
    last.segmentation = None;
    let err = run_inference(
        &g.detections,
        Scorer::Head(&head),
        &ExclusivePrior::default(),
        &Config {
            regroup: false,
            ..cfg.clone()
        },
    )
    .unwrap_err()
    .to_string();
    assert!(err.contains("segmentation"), "{err}");
    let relaxed = Config {
        regroup: false,
        use_object_parts: false,
        ..cfg
    };
    run_inference(&g.detections, Scorer::Head(&head), &ExclusivePrior::default(), &relaxed).unwrap();
}
