//! SVG overlays of detected triplets.

use std::fmt::Write as _;

use crate::formats::DetectionRecord;
use crate::regroup::HoiTriplet;

const HUMAN_COLOR: &str = "#d62728";
const OBJECT_COLOR: &str = "#1f77b4";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn rect(out: &mut String, b: &crate::geometry::BBox, color: &str, width: f64) {
    let _ = writeln!(
        out,
        r#"  <rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
        b.x1,
        b.y1,
        b.width(),
        b.height()
    );
}

/// Renders the image's detected boxes plus a labelled line from each human to
/// its object. Triplets scoring below `min_score` are left out.
pub fn render_svg(
    rec: &DetectionRecord,
    triplets: &[&HoiTriplet],
    actions: &[String],
    person: Option<u32>,
    min_score: f64,
) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = rec.width,
        h = rec.height
    );
    let _ = writeln!(out, r##"  <rect width="100%" height="100%" fill="#f7f7f7"/>"##);
    let _ = writeln!(out, "  <title>{}</title>", escape(&rec.image_id));
    for inst in &rec.instances {
        let color = if Some(inst.bbox.category) == person {
            HUMAN_COLOR
        } else {
            OBJECT_COLOR
        };
        rect(&mut out, &inst.bbox, color, 2.0);
    }
    for t in triplets.iter().filter(|t| t.score >= min_score) {
        let name = actions
            .get(t.action as usize)
            .map_or_else(|| t.action.to_string(), |s| s.clone());
        let (hx, hy) = t.human.center();
        let label = format!("{} {:.2}", escape(&name), t.score);
        if let Some(o) = &t.object {
            let (ox, oy) = o.center();
            let _ = writeln!(
                out,
                r#"  <line x1="{hx:.1}" y1="{hy:.1}" x2="{ox:.1}" y2="{oy:.1}" stroke="{HUMAN_COLOR}" stroke-dasharray="4 2"/>"#
            );
            let _ = writeln!(
                out,
                r#"  <text x="{:.1}" y="{:.1}" font-size="10" fill="{OBJECT_COLOR}">{label}</text>"#,
                (hx + ox) / 2.0,
                (hy + oy) / 2.0
            );
        } else {
            let _ = writeln!(
                out,
                r#"  <text x="{:.1}" y="{:.1}" font-size="10" fill="{HUMAN_COLOR}">{label}</text>"#,
                t.human.x1,
                t.human.y1 - 2.0
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::Instance;
    use crate::geometry::BBox;

    #[test]
    fn colors_and_labels() {
        let h = BBox::with_score(0.0, 0.0, 10.0, 20.0, 0.9, 0).unwrap();
        let o = BBox::with_score(5.0, 15.0, 25.0, 25.0, 0.8, 1).unwrap();
        let rec = DetectionRecord {
            image_id: "a<b".into(),
            width: 30,
            height: 30,
            instances: [h, o]
                .into_iter()
                .map(|bbox| Instance {
                    bbox,
                    keypoints: None,
                    segmentation: None,
                })
                .collect(),
        };
        let t = HoiTriplet {
            image_id: "a<b".into(),
            human: h,
            action: 0,
            object: Some(o),
            score: 0.625,
        };
        let svg = render_svg(&rec, &[&t], &["ski-instr".into()], Some(0), 0.0);
        assert!(svg.contains(HUMAN_COLOR) && svg.contains(OBJECT_COLOR));
        assert!(svg.contains("ski-instr 0.62") || svg.contains("ski-instr 0.63"));
        assert!(svg.contains("a&lt;b"));
        let hidden = render_svg(&rec, &[&t], &["ski-instr".into()], Some(0), 0.7);
        assert!(!hidden.contains("ski-instr"));
    }
}
