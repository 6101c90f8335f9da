//! Role mAP: one-to-one triplet matching at IoU >= 0.5 on both boxes,
//! all-point interpolated average precision per action, and the mean.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::regroup::{ActionId, HoiTriplet};

pub const IOU_THRESHOLD: f64 = 0.5;

/// Ground-truth `<human, action, object>`; `object` is `None` for agent-only actions.
#[derive(Debug, Clone, PartialEq)]
pub struct GtTriplet {
    pub image_id: String,
    pub human: BBox,
    pub action: ActionId,
    pub object: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// True-positive flag per detection, in descending score order.
    pub tp: Vec<bool>,
    pub scores: Vec<f64>,
    /// Matched ground-truth index (into the `gts` slice) per detection.
    pub matched: Vec<Option<usize>>,
    pub npos: usize,
}

/// IoU sum when both boxes clear the threshold; object boxes must be present on both sides or absent on both.
fn pair_overlap(det: &HoiTriplet, gt: &GtTriplet) -> Option<f64> {
    let h = iou(&det.human, &gt.human);
    if h < IOU_THRESHOLD {
        return None;
    }
    match (&det.object, &gt.object) {
        (None, None) => Some(h + 1.0),
        (Some(d), Some(g)) => {
            let o = iou(d, g);
            (o >= IOU_THRESHOLD).then_some(h + o)
        }
        _ => None,
    }
}

/// Greedy matching for one action. Detections are visited by descending
/// score (stable on input order); each takes the unmatched same-image GT
/// with the highest IoU sum, ties to the lower GT index.
pub fn match_detections(dets: &[HoiTriplet], gts: &[GtTriplet], action: ActionId) -> MatchResult {
    let mut order: Vec<&HoiTriplet> = dets.iter().filter(|d| d.action == action).collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let npos = gts.iter().filter(|g| g.action == action).count();
    let mut used = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(order.len());
    let mut matched = Vec::with_capacity(order.len());
    for det in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if used[gi] || gt.action != action || gt.image_id != det.image_id {
                continue;
            }
            if let Some(overlap) = pair_overlap(det, gt) {
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
        }
        if let Some((gi, _)) = best {
            used[gi] = true;
        }
        tp.push(best.is_some());
        matched.push(best.map(|(gi, _)| gi));
    }
    MatchResult {
        tp,
        scores: order.iter().map(|d| d.score).collect(),
        matched,
        npos,
    }
}

/// Area under the monotone precision envelope. `None` when there is nothing
/// to evaluate (no positives and no detections); 0 when only detections exist.
pub fn average_precision(tp: &[bool], npos: usize) -> Option<f64> {
    if npos == 0 {
        return if tp.is_empty() { None } else { Some(0.0) };
    }
    let (recall, precision) = cumulative_pr(tp, npos);
    let mut envelope = precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&envelope) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Some(ap.clamp(0.0, 1.0))
}

fn cumulative_pr(tp: &[bool], npos: usize) -> (Vec<f64>, Vec<f64>) {
    let mut hits = 0usize;
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / npos as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    (recall, precision)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionAp {
    pub ap: f64,
    pub npos: usize,
    pub num_detections: usize,
    /// Whether the action contributes to the mean (it has positives).
    pub counted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_action: BTreeMap<ActionId, ActionAp>,
    pub map_role: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub curves: BTreeMap<ActionId, Vec<PrPoint>>,
}

impl EvalResult {
    /// Writes `action,recall,precision,score` rows.
    pub fn write_pr_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["action", "recall", "precision", "score"])?;
        for (action, points) in &self.curves {
            for p in points {
                w.write_record([
                    action.to_string(),
                    p.recall.to_string(),
                    p.precision.to_string(),
                    p.score.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Mean AP over the actions of `vocabulary` that have at least one ground truth.
/// Every detection and ground truth must use an action from `vocabulary`.
pub fn map_role(dets: &[HoiTriplet], gts: &[GtTriplet], vocabulary: &[ActionId]) -> Result<EvalResult> {
    let vocab: BTreeSet<ActionId> = vocabulary.iter().copied().collect();
    if let Some(d) = dets.iter().find(|d| !vocab.contains(&d.action)) {
        return Err(Error::validation(format!(
            "detection in image {} uses action {} outside the evaluation vocabulary",
            d.image_id, d.action
        )));
    }
    if let Some(g) = gts.iter().find(|g| !vocab.contains(&g.action)) {
        return Err(Error::validation(format!(
            "ground truth in image {} uses action {} outside the evaluation vocabulary",
            g.image_id, g.action
        )));
    }
    let mut per_action = BTreeMap::new();
    let mut curves = BTreeMap::new();
    let mut sum = 0.0;
    let mut counted = 0usize;
    for &action in &vocab {
        let m = match_detections(dets, gts, action);
        let Some(ap) = average_precision(&m.tp, m.npos) else {
            continue;
        };
        if m.npos > 0 {
            sum += ap;
            counted += 1;
            let (recall, precision) = cumulative_pr(&m.tp, m.npos);
            curves.insert(
                action,
                recall
                    .into_iter()
                    .zip(precision)
                    .zip(&m.scores)
                    .map(|((recall, precision), &score)| PrPoint {
                        precision,
                        recall,
                        score,
                    })
                    .collect(),
            );
        }
        per_action.insert(
            action,
            ActionAp {
                ap,
                npos: m.npos,
                num_detections: m.tp.len(),
                counted: m.npos > 0,
            },
        );
    }
    Ok(EvalResult {
        per_action,
        map_role: if counted == 0 { 0.0 } else { sum / counted as f64 },
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn gt(img: &str, h: BBox, a: ActionId, o: Option<BBox>) -> GtTriplet {
        GtTriplet {
            image_id: img.into(),
            human: h,
            action: a,
            object: o,
        }
    }

    fn det(img: &str, h: BBox, a: ActionId, o: Option<BBox>, score: f64) -> HoiTriplet {
        HoiTriplet {
            image_id: img.into(),
            human: h,
            action: a,
            object: o,
            score,
        }
    }

    #[test]
    fn exact_detection_is_tp() {
        let (h, o) = (bx(0.0, 0.0, 10.0, 20.0), bx(5.0, 15.0, 15.0, 25.0));
        let m = match_detections(&[det("i", h, 0, Some(o), 0.9)], &[gt("i", h, 0, Some(o))], 0);
        assert_eq!((m.tp, m.npos), (vec![true], 1));
    }

    #[test]
    fn low_object_iou_is_fp() {
        let h = bx(0.0, 0.0, 10.0, 20.0);
        let o = bx(0.0, 0.0, 10.0, 10.0);
        // IoU([0,0,10,10],[0,0,10,3]) = 0.3
        let m = match_detections(
            &[det("i", h, 0, Some(bx(0.0, 0.0, 10.0, 3.0)), 0.9)],
            &[gt("i", h, 0, Some(o))],
            0,
        );
        assert_eq!(m.tp, vec![false]);
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let (h, o) = (bx(0.0, 0.0, 10.0, 20.0), bx(5.0, 15.0, 15.0, 25.0));
        let m = match_detections(
            &[det("i", h, 0, Some(o), 0.6), det("i", h, 0, Some(o), 0.9)],
            &[gt("i", h, 0, Some(o))],
            0,
        );
        assert_eq!(m.scores, vec![0.9, 0.6]);
        assert_eq!(m.tp, vec![true, false]);
    }

    #[test]
    fn role_presence_must_agree() {
        let (h, o) = (bx(0.0, 0.0, 10.0, 20.0), bx(5.0, 15.0, 15.0, 25.0));
        assert_eq!(
            match_detections(&[det("i", h, 0, None, 0.9)], &[gt("i", h, 0, None)], 0).tp,
            vec![true]
        );
        assert_eq!(
            match_detections(&[det("i", h, 0, Some(o), 0.9)], &[gt("i", h, 0, None)], 0).tp,
            vec![false]
        );
        assert_eq!(
            match_detections(&[det("i", h, 0, None, 0.9)], &[gt("i", h, 0, Some(o))], 0).tp,
            vec![false]
        );
    }

    #[test]
    fn other_image_never_matches() {
        let h = bx(0.0, 0.0, 10.0, 20.0);
        assert_eq!(
            match_detections(&[det("a", h, 0, None, 0.9)], &[gt("b", h, 0, None)], 0).tp,
            vec![false]
        );
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true], 1), Some(1.0));
        assert_eq!(average_precision(&[false, true], 1), Some(0.5));
        let ap = average_precision(&[true, false, true], 2).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-15);
        assert_eq!(average_precision(&[], 0), None);
        assert_eq!(average_precision(&[false], 0), Some(0.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
    }

    #[test]
    fn map_examples() {
        let (h1, o1) = (bx(0.0, 0.0, 10.0, 20.0), bx(5.0, 15.0, 15.0, 25.0));
        let (h2, o2) = (bx(50.0, 0.0, 60.0, 20.0), bx(55.0, 15.0, 65.0, 25.0));
        let gts = vec![gt("i", h1, 0, Some(o1)), gt("i", h2, 1, Some(o2))];
        let perfect = vec![det("i", h1, 0, Some(o1), 0.9), det("i", h2, 1, Some(o2), 0.8)];
        assert_eq!(map_role(&perfect, &gts, &[0, 1]).unwrap().map_role, 1.0);
        assert_eq!(map_role(&[], &gts, &[0, 1]).unwrap().map_role, 0.0);

        // action 1 gets AP 0.5: an FP ranked above the TP
        let half = vec![
            det("i", h1, 0, Some(o1), 0.9),
            det("i", h1, 1, Some(o2), 0.95),
            det("i", h2, 1, Some(o2), 0.8),
        ];
        let r = map_role(&half, &gts, &[0, 1, 2]).unwrap();
        assert!((r.map_role - 0.75).abs() < 1e-15);
        assert!(!r.per_action.contains_key(&2));

        assert!(map_role(&[det("i", h1, 7, None, 0.5)], &gts, &[0, 1]).is_err());
    }

    #[test]
    fn result_json_and_csv() {
        let h = bx(0.0, 0.0, 10.0, 20.0);
        let r = map_role(&[det("i", h, 0, None, 0.9)], &[gt("i", h, 0, None)], &[0]).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalResult>(&json).unwrap(), r);
        let mut buf = Vec::new();
        r.write_pr_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "action,recall,precision,score\n0,1,1,0.9\n"
        );
    }
}
