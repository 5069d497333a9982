use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{bev_iou, iou_3d, pr_curve, yaw_error_deg, GtBox, Interpolation, PrCurve, ScoredBox};
use crate::error::Result;
use crate::geometry::{OrientedBox3D, Vec3};

/// Largest centre distance at which a prediction is paired with a ground
/// truth for the yaw and centre error statistics.
pub const ERROR_PAIRING_GATE_M: f64 = 3.0;

pub const BUCKETS: [&str; 3] = ["easy", "moderate", "hard"];

/// A ground-truth box with its difficulty level: 0 easy, 1 moderate,
/// 2 hard, `None` for boxes that only count in the overall bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: OrientedBox3D,
    pub difficulty: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalFrame {
    pub frame_id: u64,
    pub ground_truth: Vec<GroundTruth>,
    pub predictions: Vec<OrientedBox3D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap_11: f64,
    pub ap_40: f64,
    pub curve: PrCurve,
}

impl ApSummary {
    fn from_curve(curve: PrCurve, has_gt: bool) -> Self {
        let (ap_11, ap_40) = if has_gt {
            (
                curve.average_precision(Interpolation::Eleven),
                curve.average_precision(Interpolation::Forty),
            )
        } else {
            (0.0, 0.0)
        };
        ApSummary { ap_11, ap_40, curve }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub name: String,
    pub n_gt: usize,
    pub bev: ApSummary,
    pub box_3d: ApSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Ground truths paired with a prediction.
    pub matched: usize,
    pub yaw_mean_deg: f64,
    pub yaw_median_deg: f64,
    /// Fraction of paired instances with yaw error above 45°.
    pub yaw_over_45_fraction: f64,
    pub centre_mean_m: f64,
    pub centre_median_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    /// How difficulty levels were assigned.
    pub difficulty_scheme: String,
    pub n_frames: usize,
    pub n_gt: usize,
    pub n_predictions: usize,
    /// `easy`, `moderate`, `hard` (cumulative) and `overall`.
    pub buckets: Vec<BucketReport>,
    pub errors: ErrorStats,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn error_stats(frames: &[EvalFrame]) -> ErrorStats {
    let mut yaw = Vec::new();
    let mut centre = Vec::new();
    for f in frames {
        let mut pairs = Vec::new();
        for (g, gt) in f.ground_truth.iter().enumerate() {
            for (p, pred) in f.predictions.iter().enumerate() {
                let d = (gt.bbox.centre() - pred.centre()).norm();
                if d <= ERROR_PAIRING_GATE_M {
                    pairs.push((d, g, p));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_g = vec![false; f.ground_truth.len()];
        let mut used_p = vec![false; f.predictions.len()];
        for (d, g, p) in pairs {
            if used_g[g] || used_p[p] {
                continue;
            }
            used_g[g] = true;
            used_p[p] = true;
            centre.push(d);
            yaw.push(yaw_error_deg(f.predictions[p].yaw, f.ground_truth[g].bbox.yaw));
        }
    }
    let n = yaw.len();
    if n == 0 {
        return ErrorStats::default();
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    ErrorStats {
        matched: n,
        yaw_mean_deg: mean(&yaw),
        yaw_over_45_fraction: yaw.iter().filter(|e| **e > 45.0).count() as f64 / n as f64,
        centre_mean_m: mean(&centre),
        yaw_median_deg: median(&mut yaw),
        centre_median_m: median(&mut centre),
    }
}

/// AP_BEV and AP_3D per cumulative difficulty bucket and overall, plus
/// yaw and centre error statistics.
pub fn evaluate(frames: &[EvalFrame], iou_threshold: f64, difficulty_scheme: &str) -> Result<EvalReport> {
    let mut preds = Vec::new();
    for (k, f) in frames.iter().enumerate() {
        for b in &f.predictions {
            preds.push(ScoredBox {
                id: preds.len() as u64,
                frame: k,
                bbox: *b,
            });
        }
    }
    let mut buckets = Vec::new();
    let levels: Vec<(String, Option<usize>)> = BUCKETS
        .iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), Some(i)))
        .chain([("overall".to_string(), None)])
        .collect();
    let mut n_gt_total = 0;
    for (name, level) in levels {
        let gts: Vec<GtBox> = frames
            .iter()
            .enumerate()
            .flat_map(|(k, f)| {
                f.ground_truth.iter().map(move |g| GtBox {
                    frame: k,
                    bbox: g.bbox,
                    ignore: match level {
                        Some(l) => g.difficulty.is_none_or(|d| d > l),
                        None => false,
                    },
                })
            })
            .collect();
        let n_gt = gts.iter().filter(|g| !g.ignore).count();
        if level.is_none() {
            n_gt_total = n_gt;
        }
        buckets.push(BucketReport {
            name,
            n_gt,
            bev: ApSummary::from_curve(pr_curve(&preds, &gts, bev_iou, iou_threshold)?, n_gt > 0),
            box_3d: ApSummary::from_curve(pr_curve(&preds, &gts, iou_3d, iou_threshold)?, n_gt > 0),
        });
    }
    Ok(EvalReport {
        iou_threshold,
        difficulty_scheme: difficulty_scheme.to_string(),
        n_frames: frames.len(),
        n_gt: n_gt_total,
        n_predictions: preds.len(),
        buckets,
        errors: error_stats(frames),
    })
}

impl EvalReport {
    pub fn bucket(&self, name: &str) -> Option<&BucketReport> {
        self.buckets.iter().find(|b| b.name == name)
    }

    /// Aligned plain-text summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "IoU threshold {:.2}, {} frames, {} ground truths, {} predictions, difficulty by {}",
            self.iou_threshold, self.n_frames, self.n_gt, self.n_predictions, self.difficulty_scheme
        );
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>9} {:>9} {:>9} {:>9}",
            "bucket", "n_gt", "BEV@11", "BEV@40", "3D@11", "3D@40"
        );
        for b in &self.buckets {
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                b.name, b.n_gt, b.bev.ap_11, b.bev.ap_40, b.box_3d.ap_11, b.box_3d.ap_40
            );
        }
        let e = &self.errors;
        let _ = writeln!(
            s,
            "paired {}: yaw error mean {:.2} deg, median {:.2} deg, >45 deg {:.2}%; centre error mean {:.3} m, median {:.3} m",
            e.matched,
            e.yaw_mean_deg,
            e.yaw_median_deg,
            100.0 * e.yaw_over_45_fraction,
            e.centre_mean_m,
            e.centre_median_m
        );
        s
    }
}

/// Top-down view (x to the right, depth upwards) of ground truth in red,
/// predictions in green and optional points in grey.
pub fn bev_svg(gts: &[OrientedBox3D], preds: &[OrientedBox3D], points: &[Vec3]) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut zs: Vec<f64> = Vec::new();
    for b in gts.iter().chain(preds) {
        for c in b.footprint() {
            xs.push(c.x);
            zs.push(c.y);
        }
    }
    for p in points {
        xs.push(p.x);
        zs.push(p.z);
    }
    let bounds = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() {
            (lo - 1.0, hi + 1.0)
        } else {
            (-1.0, 1.0)
        }
    };
    let (x0, x1) = bounds(&xs);
    let (z0, z1) = bounds(&zs);
    let scale = 20.0;
    let (w, h) = ((x1 - x0) * scale, (z1 - z0) * scale);
    let map = |x: f64, z: f64| ((x - x0) * scale, (z1 - z) * scale);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for p in points {
        let (u, v) = map(p.x, p.z);
        let _ = writeln!(s, r##"<circle cx="{u:.2}" cy="{v:.2}" r="1.5" fill="#888"/>"##);
    }
    for (boxes, colour) in [(gts, "red"), (preds, "green")] {
        for b in boxes {
            let fp = b.footprint();
            let pts: Vec<String> = fp
                .iter()
                .map(|c| {
                    let (u, v) = map(c.x, c.y);
                    format!("{u:.2},{v:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            // heading tick from the centre to the front edge
            let c = b.centre();
            let (sy, cy) = b.yaw.sin_cos();
            let half = b.length() / 2.0;
            let (u0, v0) = map(c.x, c.z);
            let (u1, v1) = map(c.x + sy * half, c.z + cy * half);
            let _ = writeln!(
                s,
                r#"<line x1="{u0:.2}" y1="{v0:.2}" x2="{u1:.2}" y2="{v1:.2}" stroke="{colour}" stroke-width="2"/>"#
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
