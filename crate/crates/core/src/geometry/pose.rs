use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Maps an angle into `[0, 2π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Maps an angle into `[-π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let a = normalize_angle(angle);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Rotation about the camera Y axis, KITTI `rotation_y` sign convention:
/// `x' = x cosθ + z sinθ`, `z' = -x sinθ + z cosθ`.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Derivative of [`yaw_rotation`] with respect to the angle.
pub fn yaw_rotation_derivative(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

/// Restricted rigid motion: a yaw about the vertical axis followed by a
/// translation, both in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose4DoF {
    yaw: f64,
    translation: [f64; 3],
}

impl Pose4DoF {
    pub fn new(yaw: f64, translation: Vec3) -> Self {
        Pose4DoF {
            yaw: normalize_angle(yaw),
            translation: translation.into(),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, Vec3::zeros())
    }

    pub fn try_new(yaw: f64, translation: Vec3) -> Result<Self> {
        if !yaw.is_finite() || translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose must be finite"));
        }
        Ok(Self::new(yaw, translation))
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        yaw_rotation(self.yaw)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    /// `g⁻¹ p`, i.e. the canonical-frame coordinates of a camera-frame point.
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation().transpose() * (p - self.translation())
    }

    pub fn inverse(&self) -> Pose4DoF {
        let r_t = self.rotation().transpose();
        Pose4DoF::new(-self.yaw, -(r_t * self.translation()))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose4DoF) -> Pose4DoF {
        Pose4DoF::new(
            self.yaw + other.yaw,
            self.rotation() * other.translation() + self.translation(),
        )
    }

    pub fn to_rigid(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation(),
            translation: self.translation(),
        }
    }
}

/// Maps every point through `pose`.
pub fn apply_pose(pose: &Pose4DoF, points: &[Vec3]) -> Vec<Vec3> {
    let r = pose.rotation();
    let t = pose.translation();
    points.iter().map(|p| r * p + t).collect()
}

/// General rigid transform; used for ego-motion and sensor extrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Validates that `rotation` is orthonormal with determinant +1 (to 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-9) || !((det - 1.0).abs() <= 1e-9) {
            return Err(Error::invalid(format!(
                "rotation is not a proper rotation (orthonormality error {ortho:e}, det {det})"
            )));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> RigidTransform {
        let r_t = self.rotation.transpose();
        RigidTransform {
            rotation: r_t,
            translation: -(r_t * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Interprets the transform as a 4-DoF pose. Only exact when the rotation
    /// is about the Y axis.
    pub fn to_pose(&self) -> Pose4DoF {
        let yaw = self.rotation[(0, 2)].atan2(self.rotation[(0, 0)]);
        Pose4DoF::new(yaw, self.translation)
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        RigidTransform::new(rotation, Vec3::new(v[3], v[7], v[11]))
    }
}

/// Ego-motion between two frames of the sensor platform, or the pose of a
/// camera in its sequence's world frame.
pub type EgoMotion = RigidTransform;
