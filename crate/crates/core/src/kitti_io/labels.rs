//! KITTI label lines:
//! `type trunc occ alpha x1 y1 x2 y2 h w l x y z ry [score]`.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{wrap_pi, CameraCalibration, OrientedBox3D, Projection, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// `(x1, y1, x2, y2)` pixels.
    pub bbox: [f64; 4],
    /// `(h, w, l)` metres.
    pub dimensions: [f64; 3],
    /// Bottom-centre in the camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

/// KITTI difficulty thresholds per level: minimum 2D height (px), maximum
/// truncation, maximum occlusion.
const DIFFICULTY: [(f64, f64, i32); 3] = [(40.0, 0.15, 0), (25.0, 0.30, 1), (25.0, 0.50, 2)];

impl KittiLabel {
    /// Label for an internal box. The 2D box is the projection of the eight
    /// corners clipped to the image, or all zeros without a camera or when
    /// no corner is in front of it.
    pub fn from_box(b: &OrientedBox3D, camera: Option<&CameraCalibration>, score: Option<f64>) -> Self {
        let c = b.centre();
        let rotation_y = wrap_pi(b.yaw - FRAC_PI_2);
        let bbox = camera.map(|cam| project_box(b, cam)).unwrap_or([0.0; 4]);
        KittiLabel {
            kind: "Car".to_string(),
            truncated: -1.0,
            occluded: -1,
            alpha: wrap_pi(rotation_y - c.x.atan2(c.z)),
            bbox,
            dimensions: [b.height(), b.width(), b.length()],
            location: [c.x, c.y + b.height() / 2.0, c.z],
            rotation_y,
            score,
        }
    }

    /// The internal geometric-centre box; score defaults to 1.
    pub fn to_box(&self) -> Result<OrientedBox3D> {
        let [h, w, l] = self.dimensions;
        let [x, y, z] = self.location;
        OrientedBox3D::new(
            Vec3::new(x, y - h / 2.0, z),
            [l, w, h],
            self.rotation_y + FRAC_PI_2,
            self.score.unwrap_or(1.0),
        )
    }

    /// 0 easy, 1 moderate, 2 hard, `None` beyond hard.
    pub fn difficulty(&self) -> Option<usize> {
        let height = self.bbox[3] - self.bbox[1];
        DIFFICULTY
            .iter()
            .position(|&(min_h, max_t, max_o)| {
                height >= min_h && self.truncated <= max_t && self.occluded <= max_o && self.occluded >= 0
            })
    }

    fn to_line(&self) -> String {
        let mut s = format!(
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
            self.kind,
            self.truncated,
            self.occluded,
            self.alpha,
            self.bbox[0],
            self.bbox[1],
            self.bbox[2],
            self.bbox[3],
            self.dimensions[0],
            self.dimensions[1],
            self.dimensions[2],
            self.location[0],
            self.location[1],
            self.location[2],
            self.rotation_y
        );
        if let Some(score) = self.score {
            s.push_str(&format!(" {score:.2}"));
        }
        s
    }
}

fn project_box(b: &OrientedBox3D, cam: &CameraCalibration) -> [f64; 4] {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for corner in b.corners() {
        let p = match cam.project(&corner) {
            Projection::Pixel(p) | Projection::OutOfFrame(p) => p,
            Projection::BehindCamera => continue,
        };
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if !lo[0].is_finite() {
        return [0.0; 4];
    }
    let (w, h) = (cam.width() as f64 - 1.0, cam.height() as f64 - 1.0);
    [
        lo[0].clamp(0.0, w),
        lo[1].clamp(0.0, h),
        hi[0].clamp(0.0, w),
        hi[1].clamp(0.0, h),
    ]
}

pub fn write_labels(path: &Path, labels: &[KittiLabel]) -> Result<()> {
    for l in labels {
        let finite = l.bbox.iter().chain(&l.dimensions).chain(&l.location).all(|v| v.is_finite())
            && l.alpha.is_finite()
            && l.rotation_y.is_finite();
        if !finite {
            return Err(Error::invalid(format!("non-finite label {l:?}")));
        }
    }
    let text: String = labels.iter().map(|l| l.to_line() + "\n").collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<KittiLabel>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::format_at_line(path, i + 1, msg);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 15 && fields.len() != 16 {
            return Err(at(format!("expected 15 or 16 fields, found {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = fields[k]
                .parse()
                .map_err(|e| at(format!("field {}: {e} ({:?})", k + 1, fields[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(at(format!("field {} is not finite", k + 1)))
            }
        };
        let occluded: i32 = fields[2]
            .parse()
            .map_err(|e| at(format!("field 3 (occluded): {e}")))?;
        let bbox = [num(4)?, num(5)?, num(6)?, num(7)?];
        if bbox[2] < bbox[0] || bbox[3] < bbox[1] {
            return Err(at(format!("2D box {bbox:?} has negative extent")));
        }
        let rotation_y = num(14)?;
        if rotation_y.abs() > std::f64::consts::PI + 0.005 {
            return Err(at(format!("rotation_y {rotation_y} outside [-pi, pi]")));
        }
        labels.push(KittiLabel {
            kind: fields[0].to_string(),
            truncated: num(1)?,
            occluded,
            alpha: num(3)?,
            bbox,
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        });
    }
    Ok(labels)
}
