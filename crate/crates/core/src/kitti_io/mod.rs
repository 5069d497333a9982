//! Readers and writers for KITTI object-detection files (velodyne scans,
//! calibration, labels), the mask input format and ego-motion text files.
//!
//! Boxes are geometric-centre internally; the bottom-centre location and
//! the KITTI `rotation_y` convention exist only in this module.

mod labels;
mod masks;

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Matrix4};

pub use labels::{read_labels, write_labels, KittiLabel};
pub use masks::{read_masks, write_masks, MaskDetection, MaskMeta, ReadMasks};

use crate::error::{Error, Result};
use crate::geometry::{CameraCalibration, CloudFrame, EgoMotion, PointCloud, RigidTransform, Vec3};

/// Raw `(x, y, z, reflectance)` records of a velodyne scan.
pub fn read_velodyne_raw(path: &Path) -> Result<Vec<[f32; 4]>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::format_at_byte(
            path,
            (bytes.len() - bytes.len() % 16) as u64,
            format!("{} bytes is not a whole number of 16-byte records", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
            [f(0), f(1), f(2), f(3)]
        })
        .collect())
}

pub fn write_velodyne_raw(path: &Path, records: &[[f32; 4]]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 * records.len());
    for r in records {
        for v in r {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Sensor-frame points of a velodyne scan; reflectance is dropped.
pub fn read_velodyne(path: &Path) -> Result<PointCloud> {
    let raw = read_velodyne_raw(path)?;
    for (i, r) in raw.iter().enumerate() {
        if r[..3].iter().any(|v| !v.is_finite()) {
            return Err(Error::format_at_byte(path, 16 * i as u64, "non-finite coordinate"));
        }
    }
    let pts = raw
        .iter()
        .map(|r| Vec3::new(r[0] as f64, r[1] as f64, r[2] as f64))
        .collect();
    PointCloud::new(pts, CloudFrame::Sensor)
}

/// Writes points with zero reflectance.
pub fn write_velodyne(path: &Path, cloud: &PointCloud) -> Result<()> {
    let raw: Vec<[f32; 4]> = cloud
        .points()
        .iter()
        .map(|p| [p.x as f32, p.y as f32, p.z as f32, 0.0])
        .collect();
    write_velodyne_raw(path, &raw)
}

/// The calibration entries used here, from a KITTI `calib/*.txt` file.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCalib {
    pub p2: Matrix3x4<f64>,
    pub r0_rect: Matrix3<f64>,
    pub tr_velo_to_cam: Matrix3x4<f64>,
}

fn check_rotation(r: &Matrix3<f64>, what: &str) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !(err <= 1e-6) || !((r.determinant() - 1.0).abs() <= 1e-6) {
        return Err(Error::invalid(format!("{what} is not a rotation (error {err:e})")));
    }
    Ok(())
}

impl FrameCalib {
    pub fn new(p2: Matrix3x4<f64>, r0_rect: Matrix3<f64>, tr_velo_to_cam: Matrix3x4<f64>) -> Result<Self> {
        check_rotation(&r0_rect, "R0_rect")?;
        check_rotation(&tr_velo_to_cam.fixed_view::<3, 3>(0, 0).into_owned(), "Tr_velo_to_cam")?;
        Ok(FrameCalib {
            p2,
            r0_rect,
            tr_velo_to_cam,
        })
    }

    /// Identity extrinsics with a given projection.
    pub fn with_projection(p2: Matrix3x4<f64>) -> Self {
        FrameCalib {
            p2,
            r0_rect: Matrix3::identity(),
            tr_velo_to_cam: Matrix3x4::identity(),
        }
    }

    /// `X_cam = R0_rect · Tr_velo_to_cam · X̃_velo` as a 4×4 matrix.
    pub fn velo_to_cam_matrix(&self) -> Matrix4<f64> {
        let mut tr = Matrix4::identity();
        tr.fixed_view_mut::<3, 4>(0, 0).copy_from(&self.tr_velo_to_cam);
        let mut r0 = Matrix4::identity();
        r0.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r0_rect);
        r0 * tr
    }

    pub fn velo_to_cam_transform(&self) -> Result<RigidTransform> {
        let m = self.velo_to_cam_matrix();
        RigidTransform::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
        .or_else(|_| {
            // R0_rect composed with Tr may be off by rounding in the file
            let r = m.fixed_view::<3, 3>(0, 0).into_owned();
            let svd = r.svd(true, true);
            let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
            RigidTransform::new(u * v_t, m.fixed_view::<3, 1>(0, 3).into_owned())
        })
    }

    pub fn camera(&self, width: u32, height: u32) -> Result<CameraCalibration> {
        CameraCalibration::new(self.p2, width, height)
    }
}

fn parse_values<const N: usize>(path: &Path, line: usize, key: &str, text: &str) -> Result<[f64; N]> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format_at_line(path, line, format!("{key}: {e}")))?;
    values.as_slice().try_into().map_err(|_| {
        Error::format_at_line(path, line, format!("{key}: expected {N} values, found {}", values.len()))
    })
}

pub fn read_calib(path: &Path) -> Result<FrameCalib> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut p2, mut r0, mut tr) = (None, None, None);
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::format_at_line(path, i + 1, "expected `KEY: values`"));
        };
        match key.trim() {
            "P2" => p2 = Some(Matrix3x4::from_row_slice(&parse_values::<12>(path, i + 1, "P2", rest)?)),
            "R0_rect" => r0 = Some(Matrix3::from_row_slice(&parse_values::<9>(path, i + 1, "R0_rect", rest)?)),
            "Tr_velo_to_cam" => {
                tr = Some(Matrix3x4::from_row_slice(&parse_values::<12>(
                    path,
                    i + 1,
                    "Tr_velo_to_cam",
                    rest,
                )?))
            }
            _ => {}
        }
    }
    let missing = |k: &str| Error::format(path, format!("missing key {k}"));
    FrameCalib::new(
        p2.ok_or_else(|| missing("P2"))?,
        r0.ok_or_else(|| missing("R0_rect"))?,
        tr.ok_or_else(|| missing("Tr_velo_to_cam"))?,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

/// Writes the three used entries in KITTI layout.
pub fn write_calib(path: &Path, calib: &FrameCalib) -> Result<()> {
    let rows = |m: &[f64], cols: usize| -> Vec<f64> {
        // nalgebra stores column-major
        let rows = m.len() / cols;
        (0..rows).flat_map(|r| (0..cols).map(move |c| m[c * rows + r])).collect()
    };
    let text = format!(
        "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
        join(&rows(calib.p2.as_slice(), 4)),
        join(&rows(calib.r0_rect.as_slice(), 3)),
        join(&rows(calib.tr_velo_to_cam.as_slice(), 4)),
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Moves a sensor-frame cloud into the rectified camera frame.
pub fn velo_to_cam(calib: &FrameCalib, cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.frame() != CloudFrame::Sensor {
        return Err(Error::invalid("velo_to_cam expects a sensor-frame cloud"));
    }
    let m = calib.velo_to_cam_matrix();
    let pts = cloud
        .points()
        .iter()
        .map(|p| (m * p.push(1.0)).xyz())
        .collect();
    PointCloud::new(pts, CloudFrame::Camera)
}

/// Inverse of [`velo_to_cam`].
pub fn cam_to_velo(calib: &FrameCalib, cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.frame() != CloudFrame::Camera {
        return Err(Error::invalid("cam_to_velo expects a camera-frame cloud"));
    }
    let inv = calib
        .velo_to_cam_matrix()
        .try_inverse()
        .ok_or_else(|| Error::invalid("calibration is singular"))?;
    let pts = cloud
        .points()
        .iter()
        .map(|p| (inv * p.push(1.0)).xyz())
        .collect();
    PointCloud::new(pts, CloudFrame::Sensor)
}

/// One `[R | t]` row-major line per frame.
pub fn write_ego(path: &Path, poses: &[EgoMotion]) -> Result<()> {
    let mut out = String::new();
    for pose in poses {
        let row: Vec<String> = pose.to_row_major().iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_ego(path: &Path) -> Result<Vec<EgoMotion>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let arr = parse_values::<12>(path, i + 1, "pose", line)?;
        poses.push(
            EgoMotion::from_row_major(&arr)
                .map_err(|e| Error::format_at_line(path, i + 1, e.to_string()))?,
        );
    }
    Ok(poses)
}
