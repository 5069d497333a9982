use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::pose::Vec3;
use crate::error::{Error, Result};

/// Pinhole calibration: a 3×4 projection from homogeneous camera-frame
/// metres to homogeneous pixels, plus the image size.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    projection: Matrix3x4<f64>,
    width: u32,
    height: u32,
}

/// Outcome of projecting a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel(Vector2<f64>),
    /// Lands outside `[0, W) × [0, H)`; the coordinates are still reported.
    OutOfFrame(Vector2<f64>),
    /// Non-positive depth after the homogeneous transform.
    BehindCamera,
}

impl Projection {
    pub fn pixel(&self) -> Option<Vector2<f64>> {
        match self {
            Projection::Pixel(p) => Some(*p),
            _ => None,
        }
    }
}

impl CameraCalibration {
    pub fn new(projection: Matrix3x4<f64>, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("projection matrix must be finite"));
        }
        // rank 3 <=> P Pᵀ is non-singular
        let gram: Matrix3<f64> = projection * projection.transpose();
        let scale = gram.abs().max().max(f64::MIN_POSITIVE);
        if gram.determinant().abs() <= 1e-12 * scale.powi(3) {
            return Err(Error::invalid("projection matrix must have rank 3"));
        }
        Ok(CameraCalibration {
            projection,
            width,
            height,
        })
    }

    pub fn projection(&self) -> &Matrix3x4<f64> {
        &self.projection
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn project(&self, point: &Vec3) -> Projection {
        let h = self.projection * Vector4::new(point.x, point.y, point.z, 1.0);
        if !(h.z > 0.0) {
            return Projection::BehindCamera;
        }
        let px = Vector2::new(h.x / h.z, h.y / h.z);
        let inside = px.x >= 0.0
            && px.y >= 0.0
            && px.x < f64::from(self.width)
            && px.y < f64::from(self.height);
        if inside {
            Projection::Pixel(px)
        } else {
            Projection::OutOfFrame(px)
        }
    }

    /// Raster cell `(column, row)` covering the projection, using floor
    /// indexing: cell `(i, j)` covers `[i, i+1) × [j, j+1)`.
    pub fn pixel_index(&self, point: &Vec3) -> Option<(u32, u32)> {
        let px = self.project(point).pixel()?;
        let (u, v) = (px.x.floor(), px.y.floor());
        // guard against rounding at the far border
        if u < f64::from(self.width) && v < f64::from(self.height) {
            Some((u as u32, v as u32))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFrame {
    Sensor,
    Camera,
}

/// Finite set of 3D points with a frame tag.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    frame: CloudFrame,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, frame: CloudFrame) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        Ok(PointCloud { points, frame })
    }

    pub fn empty(frame: CloudFrame) -> Self {
        PointCloud {
            points: Vec::new(),
            frame,
        }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn frame(&self) -> CloudFrame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Binary instance mask with the detector's confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2D {
    width: u32,
    height: u32,
    bitmap: Vec<bool>,
    score: f64,
}

impl Mask2D {
    /// `bitmap` is row-major, `height` rows of `width` pixels.
    pub fn new(width: u32, height: u32, bitmap: Vec<bool>, score: f64) -> Result<Self> {
        if bitmap.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "bitmap has {} pixels, expected {}x{}",
                bitmap.len(),
                width,
                height
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("mask score {score} outside [0, 1]")));
        }
        Ok(Mask2D {
            width,
            height,
            bitmap,
            score,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool, score: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize], score)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn get(&self, column: u32, row: u32) -> bool {
        column < self.width
            && row < self.height
            && self.bitmap[row as usize * self.width as usize + column as usize]
    }

    pub fn area(&self) -> usize {
        self.bitmap.iter().filter(|b| **b).count()
    }
}

/// Keeps the camera-frame points whose projection falls on a set mask pixel.
/// Input order is preserved.
pub fn filter_points_by_mask(
    calib: &CameraCalibration,
    cloud: &PointCloud,
    mask: &Mask2D,
) -> Result<PointCloud> {
    if cloud.frame() != CloudFrame::Camera {
        return Err(Error::invalid("mask filtering needs a camera-frame cloud"));
    }
    if mask.width() != calib.width() || mask.height() != calib.height() {
        return Err(Error::invalid(format!(
            "mask is {}x{} but calibration image is {}x{}",
            mask.width(),
            mask.height(),
            calib.width(),
            calib.height()
        )));
    }
    let points = cloud
        .points()
        .iter()
        .filter(|p| match calib.pixel_index(p) {
            Some((u, v)) => mask.get(u, v),
            None => false,
        })
        .copied()
        .collect();
    Ok(PointCloud {
        points,
        frame: CloudFrame::Camera,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_calib(w: u32, h: u32) -> CameraCalibration {
        CameraCalibration::new(Matrix3x4::identity(), w, h).unwrap()
    }

    fn kitti_p2() -> Matrix3x4<f64> {
        Matrix3x4::new(
            7.215377e2, 0.0, 6.095593e2, 4.485728e1, 0.0, 7.215377e2, 1.728540e2, 2.163791e-1, 0.0,
            0.0, 1.0, 2.745884e-3,
        )
    }

    #[test]
    fn identity_intrinsics_divide_by_depth() {
        let calib = identity_calib(100, 100);
        assert_eq!(
            calib.project(&Vec3::new(2.0, 4.0, 2.0)),
            Projection::Pixel(Vector2::new(1.0, 2.0))
        );
        assert_eq!(
            calib.project(&Vec3::new(0.0, 0.0, 1.0)),
            Projection::Pixel(Vector2::new(0.0, 0.0))
        );
    }

    #[test]
    fn behind_and_outside() {
        let calib = identity_calib(100, 100);
        assert_eq!(calib.project(&Vec3::new(1.0, 1.0, -1.0)), Projection::BehindCamera);
        assert_eq!(calib.project(&Vec3::new(1.0, 1.0, 0.0)), Projection::BehindCamera);
        assert!(matches!(
            calib.project(&Vec3::new(-1.0, 0.0, 1.0)),
            Projection::OutOfFrame(_)
        ));
        assert!(matches!(
            calib.project(&Vec3::new(100.0, 0.0, 1.0)),
            Projection::OutOfFrame(_)
        ));
    }

    #[test]
    fn kitti_projection_matches_homogeneous_arithmetic() {
        let p = kitti_p2();
        let calib = CameraCalibration::new(p, 1242, 375).unwrap();
        let x = [3.1, 1.2, 17.5];
        // written out longhand, independent of nalgebra
        let rows: Vec<f64> = (0..3)
            .map(|r| p[(r, 0)] * x[0] + p[(r, 1)] * x[1] + p[(r, 2)] * x[2] + p[(r, 3)])
            .collect();
        let expected = (rows[0] / rows[2], rows[1] / rows[2]);
        let got = calib.project(&Vec3::new(x[0], x[1], x[2])).pixel().unwrap();
        assert!((got.x - expected.0).abs() < 1e-9);
        assert!((got.y - expected.1).abs() < 1e-9);
    }

    #[test]
    fn rejects_degenerate_calibration() {
        assert!(CameraCalibration::new(Matrix3x4::zeros(), 10, 10).is_err());
        assert!(CameraCalibration::new(Matrix3x4::identity(), 0, 10).is_err());
    }

    #[test]
    fn mask_filtering_extremes() {
        let calib = identity_calib(10, 10);
        let cloud = PointCloud::new(
            vec![
                Vec3::new(1.0, 1.0, 1.0),
                Vec3::new(5.0, 5.0, 1.0),
                Vec3::new(1.0, 1.0, -1.0),
                Vec3::new(50.0, 1.0, 1.0),
            ],
            CloudFrame::Camera,
        )
        .unwrap();
        let all = Mask2D::filled(10, 10, true, 1.0).unwrap();
        let none = Mask2D::filled(10, 10, false, 1.0).unwrap();
        let kept = filter_points_by_mask(&calib, &cloud, &all).unwrap();
        assert_eq!(kept.points(), &cloud.points()[..2]);
        assert!(filter_points_by_mask(&calib, &cloud, &none).unwrap().is_empty());
    }

    #[test]
    fn mask_filtering_uses_floor_and_is_idempotent() {
        let calib = identity_calib(4, 4);
        let mut bitmap = vec![false; 16];
        bitmap[4 + 2] = true; // column 2, row 1
        let mask = Mask2D::new(4, 4, bitmap, 0.9).unwrap();
        let cloud = PointCloud::new(
            vec![
                Vec3::new(2.99, 1.0, 1.0),
                Vec3::new(3.0, 1.5, 1.0),
                Vec3::new(4.0, 2.0, 2.0),
                Vec3::new(1.99, 1.0, 1.0),
            ],
            CloudFrame::Camera,
        )
        .unwrap();
        let once = filter_points_by_mask(&calib, &cloud, &mask).unwrap();
        assert_eq!(once.points(), &[cloud.points()[0], cloud.points()[2]]);
        let twice = filter_points_by_mask(&calib, &once, &mask).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn mask_filtering_rejects_sensor_frame_and_size_mismatch() {
        let calib = identity_calib(4, 4);
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, 1.0)], CloudFrame::Sensor).unwrap();
        let mask = Mask2D::filled(4, 4, true, 1.0).unwrap();
        assert!(filter_points_by_mask(&calib, &cloud, &mask).is_err());
        let cam = PointCloud::new(vec![Vec3::new(0.0, 0.0, 1.0)], CloudFrame::Camera).unwrap();
        let small = Mask2D::filled(3, 4, true, 1.0).unwrap();
        assert!(filter_points_by_mask(&calib, &cam, &small).is_err());
    }

    #[test]
    fn point_cloud_rejects_nan() {
        assert!(PointCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], CloudFrame::Camera).is_err());
    }
}
