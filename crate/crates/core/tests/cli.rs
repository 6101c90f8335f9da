use std::path::Path;
use std::process::{Command, Output};

use hoi_core::formats::{load_params, read_tensors, TripletFile};

fn hoi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoi")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = hoi(args);
    assert!(
        out.status.success(),
        "hoi {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{
  "channels": 4, "holistic_res": 2, "part_res": 2, "spatial_res": 8,
  "branch_width": 6, "ho_width": 6, "oh_width": 6, "attention_hidden": 3, "inter_hidden": 6,
  "offset_scale": "union_max_side",
  "train": {"steps": 30}
}"#;

#[test]
fn trained_head_drives_inference_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), TINY).unwrap();
    std::fs::write(d.join("spec.json"), r#"{"num_scenes": 3, "seed": 4}"#).unwrap();
    let cfg = d.join("cfg.json");
    let scenes = d.join("scenes");
    ok(&["gen-scenes", p(&d.join("spec.json")), "-o", p(&scenes)]);
    let dets = scenes.join("detections.json");
    let ann = scenes.join("annotations.json");

    ok(&["--config", p(&cfg), "encode", p(&dets), "-o", p(&d.join("pairs.bin"))]);
    let tensors = read_tensors(&d.join("pairs.bin")).unwrap();
    assert_eq!(tensors.len(), 3);
    assert!(tensors
        .iter()
        .all(|t| t.shape.len() == 3 && t.data.iter().all(|v| v.is_finite())));
    assert!(d.join("pairs.json").exists());

    ok(&["prior", p(&ann), "-o", p(&d.join("prior.json"))]);
    ok(&[
        "--config",
        p(&cfg),
        "train-toy",
        p(&dets),
        p(&ann),
        "-o",
        p(&d.join("head.bin")),
        "--seed",
        "2",
    ]);
    let (params, manifest) = load_params(&d.join("head.bin")).unwrap();
    assert_eq!(params.dims.channels, 4);
    assert_eq!(manifest.actions.len(), 2);

    // The config is not passed: dimensions come from the parameter manifest.
    let trips = d.join("trips.json");
    ok(&[
        "infer",
        p(&dets),
        "--params",
        p(&d.join("head.bin")),
        "--prior",
        p(&d.join("prior.json")),
        "-o",
        p(&trips),
    ]);
    let file = TripletFile::load(&trips).unwrap();
    assert!(!file.detections.is_empty());

    let out = ok(&[
        "eval",
        p(&trips),
        p(&ann),
        "-o",
        p(&d.join("eval.json")),
        "--pr-csv",
        p(&d.join("pr.csv")),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mAP_role"));
    let csv = std::fs::read_to_string(d.join("pr.csv")).unwrap();
    assert!(csv.lines().count() > 1);

    ok(&["visualize", p(&trips), p(&dets), "-o", p(&d.join("svg"))]);
    assert_eq!(std::fs::read_dir(d.join("svg")).unwrap().count(), 3);
}

#[test]
fn regrouping_requires_a_prior() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("spec.json"), r#"{"num_scenes": 1}"#).unwrap();
    ok(&["gen-scenes", p(&d.join("spec.json")), "-o", p(d)]);
    let (dets, scores) = (d.join("detections.json"), d.join("scores.json"));
    let base = ["infer", p(&dets), "--scores", p(&scores), "-o"];
    let (a, b) = (d.join("a.json"), d.join("b.json"));
    let out = hoi(&[&base[..], &[p(&a)]].concat());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--prior"));
    ok(&[&base[..], &[p(&b), "--no-regroup"]].concat());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"chanels": 8}"#).unwrap();
    std::fs::write(dir.path().join("ann.json"), r#"{"actions": [], "images": []}"#).unwrap();
    let out = hoi(&[
        "--config",
        p(&cfg),
        "prior",
        p(&dir.path().join("ann.json")),
        "-o",
        p(&dir.path().join("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chanels"));
}
