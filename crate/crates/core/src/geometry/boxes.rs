use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::mesh::TemplateMesh;
use super::pose::{wrap_pi, yaw_rotation, Pose4DoF, Vec3};
use crate::error::{Error, Result};

/// Emitted label: a yawed box around its geometric centre.
///
/// `yaw` uses the pose convention (length along the rotated `+z` axis) and
/// is kept in `[-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    pub centre: [f64; 3],
    /// (length, width, height) in metres.
    pub dims: [f64; 3],
    pub yaw: f64,
    pub score: f64,
}

impl OrientedBox3D {
    pub fn new(centre: Vec3, dims: [f64; 3], yaw: f64, score: f64) -> Result<Self> {
        if dims.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::invalid(format!("box dimensions must be positive: {dims:?}")));
        }
        if centre.iter().any(|c| !c.is_finite()) || !yaw.is_finite() {
            return Err(Error::invalid("box centre and yaw must be finite"));
        }
        Ok(OrientedBox3D {
            centre: centre.into(),
            dims,
            yaw: wrap_pi(yaw),
            score,
        })
    }

    pub fn centre(&self) -> Vec3 {
        Vec3::from(self.centre)
    }

    pub fn length(&self) -> f64 {
        self.dims[0]
    }

    pub fn width(&self) -> f64 {
        self.dims[1]
    }

    pub fn height(&self) -> f64 {
        self.dims[2]
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    /// The eight corners: canonical `(±w/2, ±h/2, ±l/2)` rotated and shifted.
    pub fn corners(&self) -> [Vec3; 8] {
        let r = yaw_rotation(self.yaw);
        let c = self.centre();
        let (hl, hw, hh) = (self.dims[0] / 2.0, self.dims[1] / 2.0, self.dims[2] / 2.0);
        let mut out = [Vec3::zeros(); 8];
        for (i, p) in out.iter_mut().enumerate() {
            let local = Vec3::new(
                if i & 1 == 0 { -hw } else { hw },
                if i & 2 == 0 { -hh } else { hh },
                if i & 4 == 0 { -hl } else { hl },
            );
            *p = r * local + c;
        }
        out
    }

    /// Ground-plane footprint as (x, z) points, counter-clockwise in that plane.
    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.dims[0] / 2.0, self.dims[1] / 2.0);
        let heading = Vector2::new(s, c);
        let side = Vector2::new(c, -s);
        let centre = Vector2::new(self.centre[0], self.centre[2]);
        let mut pts = [
            centre + heading * hl + side * hw,
            centre - heading * hl + side * hw,
            centre - heading * hl - side * hw,
            centre + heading * hl - side * hw,
        ];
        let area: f64 = (0..4)
            .map(|i| {
                let (a, b) = (pts[i], pts[(i + 1) % 4]);
                a.x * b.y - b.x * a.y
            })
            .sum();
        if area < 0.0 {
            pts.reverse();
        }
        pts
    }

    /// Vertical extent `(top, bottom)` along camera y (pointing down).
    pub fn y_range(&self) -> (f64, f64) {
        (
            self.centre[1] - self.dims[2] / 2.0,
            self.centre[1] + self.dims[2] / 2.0,
        )
    }
}

/// The template's tight box moved by `pose`.
pub fn posed_box(pose: &Pose4DoF, mesh: &TemplateMesh) -> OrientedBox3D {
    let b = mesh.tight_box();
    let ext = b.extents();
    OrientedBox3D {
        centre: pose.apply(&b.centre()).into(),
        dims: [ext.z, ext.x, ext.y],
        yaw: wrap_pi(pose.yaw()),
        score: 1.0,
    }
}
