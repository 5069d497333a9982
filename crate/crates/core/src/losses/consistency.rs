use crate::error::{Error, Result};
use crate::geometry::{EgoMotion, Pose4DoF, Vec3};

/// Unnormalized keypoint consistency of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyTerms {
    /// `Σ_i Σ_{j=1..K} ‖g_{i←i+j} g^{i+j} X0 − g^i X0‖²`
    pub sum: f64,
    /// Number of `(i, j)` pairs summed.
    pub pairs: usize,
    /// Gradient of `sum` with respect to each frame's translation.
    pub d_translation: Vec<Vec3>,
}

/// Keypoint consistency over consecutive frames of one track.
///
/// `camera_poses[k]` is the camera pose of frame `k` in the sequence's world
/// frame, so `g_{i←j} = C_i⁻¹ C_j`.
pub fn consistency_terms(
    poses: &[Pose4DoF],
    camera_poses: &[EgoMotion],
    keypoint: &Vec3,
    horizon: usize,
) -> Result<ConsistencyTerms> {
    let positions: Vec<Vec3> = poses.iter().map(|g| g.apply(keypoint)).collect();
    position_consistency(&positions, camera_poses, horizon)
}

/// [`consistency_terms`] on keypoint positions given directly, one per
/// frame; `d_translation` is then the gradient with respect to each
/// position.
pub fn position_consistency(
    positions: &[Vec3],
    camera_poses: &[EgoMotion],
    horizon: usize,
) -> Result<ConsistencyTerms> {
    if camera_poses.len() < positions.len() {
        return Err(Error::invalid(format!(
            "ego-motion missing: {} camera poses for a {}-frame track",
            camera_poses.len(),
            positions.len()
        )));
    }
    let mut sum = 0.0;
    let mut pairs = 0;
    let mut d_translation = vec![Vec3::zeros(); positions.len()];
    for i in 0..positions.len() {
        let to_i = camera_poses[i].inverse();
        for j in 1..=horizon {
            let k = i + j;
            if k >= positions.len() {
                break;
            }
            let ego = to_i.compose(&camera_poses[k]);
            let e = ego.apply(&positions[k]) - positions[i];
            sum += e.norm_squared();
            pairs += 1;
            d_translation[k] += ego.rotation.transpose() * e * 2.0;
            d_translation[i] -= e * 2.0;
        }
    }
    Ok(ConsistencyTerms {
        sum,
        pairs,
        d_translation,
    })
}

/// Pair-normalized consistency of one track (zero when it has no pairs).
pub fn consistency_loss(
    poses: &[Pose4DoF],
    camera_poses: &[EgoMotion],
    keypoint: &Vec3,
    horizon: usize,
) -> Result<f64> {
    let t = consistency_terms(poses, camera_poses, keypoint, horizon)?;
    Ok(if t.pairs == 0 {
        0.0
    } else {
        t.sum / t.pairs as f64
    })
}
