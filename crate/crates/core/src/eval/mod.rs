//! Detection metrics: rotated bird's-eye-view and 3D IoU, average
//! precision with 11- and 40-point interpolation, yaw error, and reports.

mod report;

use std::collections::HashSet;
use std::f64::consts::TAU;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub use report::{bev_svg, evaluate, ApSummary, BucketReport, EvalFrame, EvalReport, GroundTruth, ErrorStats};

use crate::error::{Error, Result};
use crate::geometry::OrientedBox3D;

/// Intersections below this area (m²) count as empty.
pub const MIN_INTERSECTION_AREA: f64 = 1e-12;

fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        twice += a.x * b.y - a.y * b.x;
    }
    0.5 * twice
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Sutherland–Hodgman: clips `subject` by the convex counter-clockwise
/// polygon `clip`.
fn clip_convex(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let (dp, dq) = (cross(&a, &b, &p), cross(&a, &b, &q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push(p + (q - p) * t);
            }
        }
    }
    out
}

/// Footprint intersection area in the ground plane.
pub fn bev_intersection(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let area = polygon_area(&clip_convex(&a.footprint(), &b.footprint()));
    if area < MIN_INTERSECTION_AREA {
        0.0
    } else {
        area
    }
}

/// Intersection over union of the two yawed footprints.
pub fn bev_iou(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let inter = bev_intersection(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.length() * a.width() + b.length() * b.width() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Footprint intersection times vertical overlap, over the union volume.
pub fn iou_3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let inter = bev_intersection(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let (a0, a1) = a.y_range();
    let (b0, b1) = b.y_range();
    let overlap = (a1.min(b1) - a0.max(b0)).max(0.0);
    let vol = inter * overlap;
    if vol == 0.0 {
        return 0.0;
    }
    (vol / (a.volume() + b.volume() - vol)).clamp(0.0, 1.0)
}

/// Smallest absolute angle between two yaws, degrees in `[0, 180]`.
pub fn yaw_error_deg(pred_yaw: f64, gt_yaw: f64) -> f64 {
    let d = (pred_yaw - gt_yaw).rem_euclid(TAU);
    d.min(TAU - d).to_degrees().clamp(0.0, 180.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Recall points 0, 0.1, …, 1.
    Eleven,
    /// Recall points 1/40, 2/40, …, 1.
    Forty,
}

/// A scored prediction inside a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub id: u64,
    pub frame: usize,
    pub bbox: OrientedBox3D,
}

/// A ground-truth box inside a frame. Ignored boxes neither count as
/// misses nor turn their matches into false positives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub frame: usize,
    pub bbox: OrientedBox3D,
    pub ignore: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl PrCurve {
    /// Interpolated AP: mean over recall points of the best precision at
    /// that recall or above.
    pub fn average_precision(&self, mode: Interpolation) -> f64 {
        let points: Vec<f64> = match mode {
            Interpolation::Eleven => (0..=10).map(|k| k as f64 / 10.0).collect(),
            Interpolation::Forty => (1..=40).map(|k| k as f64 / 40.0).collect(),
        };
        // suffix maxima of precision
        let mut envelope = self.precision.clone();
        for i in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[i] = envelope[i].max(envelope[i + 1]);
        }
        let mut sum = 0.0;
        for r in &points {
            let idx = self.recall.iter().position(|rec| *rec >= r - 1e-12);
            if let Some(i) = idx {
                sum += envelope[i];
            }
        }
        sum / points.len() as f64
    }
}

/// Score-descending greedy matching: each prediction takes the unmatched
/// non-ignored ground truth of its frame with the highest IoU at or above
/// `threshold`. Returns the precision/recall curve after each counted
/// prediction. Score ties are broken by prediction id.
pub fn pr_curve(
    preds: &[ScoredBox],
    gts: &[GtBox],
    iou: impl Fn(&OrientedBox3D, &OrientedBox3D) -> f64,
    threshold: f64,
) -> Result<PrCurve> {
    let mut ids = HashSet::with_capacity(preds.len());
    for p in preds {
        if !ids.insert(p.id) {
            return Err(Error::invalid(format!("duplicate prediction id {}", p.id)));
        }
        if !p.bbox.score.is_finite() {
            return Err(Error::invalid(format!("prediction {} has a non-finite score", p.id)));
        }
    }
    let mut order: Vec<&ScoredBox> = preds.iter().collect();
    order.sort_by(|a, b| b.bbox.score.total_cmp(&a.bbox.score).then(a.id.cmp(&b.id)));

    let n_gt = gts.iter().filter(|g| !g.ignore).count();
    let mut taken = vec![false; gts.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = PrCurve {
        precision: Vec::new(),
        recall: Vec::new(),
    };
    for p in order {
        let mut best: Option<(f64, usize)> = None;
        let mut hits_ignored = false;
        for (g, gt) in gts.iter().enumerate() {
            if gt.frame != p.frame {
                continue;
            }
            let v = iou(&p.bbox, &gt.bbox);
            if v < threshold {
                continue;
            }
            if gt.ignore {
                hits_ignored = true;
            } else if !taken[g] && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, g));
            }
        }
        match best {
            Some((_, g)) => {
                taken[g] = true;
                tp += 1;
            }
            None if hits_ignored => continue,
            None => fp += 1,
        }
        curve.precision.push(tp as f64 / (tp + fp) as f64);
        curve.recall.push(if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 });
    }
    Ok(curve)
}

/// Average precision under the given interpolation; 0 when there is no
/// ground truth.
pub fn average_precision(
    preds: &[ScoredBox],
    gts: &[GtBox],
    iou: impl Fn(&OrientedBox3D, &OrientedBox3D) -> f64,
    threshold: f64,
    mode: Interpolation,
) -> Result<f64> {
    if gts.iter().all(|g| g.ignore) {
        return Ok(0.0);
    }
    Ok(pr_curve(preds, gts, iou, threshold)?.average_precision(mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use std::f64::consts::PI;

    fn bx(x: f64, z: f64, l: f64, w: f64, yaw: f64) -> OrientedBox3D {
        OrientedBox3D::new(Vec3::new(x, 0.0, z), [l, w, 1.0], yaw, 1.0).unwrap()
    }

    #[test]
    fn analytic_overlaps() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        let b = bx(1.0, 0.0, 2.0, 2.0, 0.0);
        assert!((bev_iou(&a, &b) - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(bev_iou(&a, &bx(5.0, 0.0, 2.0, 2.0, 0.0)), 0.0);
        let mut c = a;
        c.centre[1] = 0.5;
        assert!((iou_3d(&a, &c) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_are_disjoint() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = bx(2.0, 0.0, 2.0, 2.0, 0.0);
        assert_eq!(bev_iou(&a, &b), 0.0);
    }

    #[test]
    fn yaw_error_wraps() {
        assert_eq!(yaw_error_deg(0.0, 0.0), 0.0);
        assert!((yaw_error_deg(0.1, TAU - 0.1) - 0.2f64.to_degrees()).abs() < 1e-9);
        assert!((yaw_error_deg(0.3, 0.3 + PI) - 180.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gts: Vec<GtBox> = (0..3)
            .map(|i| GtBox { frame: i, bbox: bx(0.0, 10.0, 4.0, 1.6, 0.2), ignore: false })
            .collect();
        let preds: Vec<ScoredBox> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| ScoredBox { id: i as u64, frame: g.frame, bbox: g.bbox })
            .collect();
        for mode in [Interpolation::Eleven, Interpolation::Forty] {
            assert_eq!(average_precision(&preds, &gts, bev_iou, 0.5, mode).unwrap(), 1.0);
            assert_eq!(average_precision(&[], &gts, bev_iou, 0.5, mode).unwrap(), 0.0);
        }
        let dup = vec![preds[0], preds[0]];
        assert!(pr_curve(&dup, &gts, bev_iou, 0.5).is_err());
    }

    #[test]
    fn ignored_matches_are_not_false_positives() {
        let gts = vec![
            GtBox { frame: 0, bbox: bx(0.0, 10.0, 4.0, 1.6, 0.0), ignore: false },
            GtBox { frame: 0, bbox: bx(5.0, 10.0, 4.0, 1.6, 0.0), ignore: true },
        ];
        let preds = vec![
            ScoredBox { id: 0, frame: 0, bbox: gts[1].bbox.with_score(0.9) },
            ScoredBox { id: 1, frame: 0, bbox: gts[0].bbox.with_score(0.8) },
        ];
        let ap = average_precision(&preds, &gts, bev_iou, 0.5, Interpolation::Forty).unwrap();
        assert_eq!(ap, 1.0);
    }
}
