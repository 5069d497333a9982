use nalgebra::Matrix3;

use super::YawBins;
use crate::error::{Error, Result};
use crate::geometry::{yaw_rotation, Region, yaw_rotation_derivative, Pose4DoF, TemplateMesh, Vec3};

fn check_inputs(points: &[Vec3], log_var: Option<&[f64]>) -> Result<()> {
    if points.is_empty() {
        return Err(Error::invalid("no points for the alignment distance"));
    }
    if let Some(lv) = log_var {
        if lv.len() != points.len() {
            return Err(Error::invalid(format!(
                "{} log-variances for {} points",
                lv.len(),
                points.len()
            )));
        }
    }
    Ok(())
}

/// Mean over points of the squared distance to the posed template,
/// `(1/|L|) Σ min_{X'∈gS0} ‖X' − X‖²`, evaluated as `d(g⁻¹X, S0)`.
pub fn half_chamfer(pose: &Pose4DoF, mesh: &TemplateMesh, points: &[Vec3]) -> Result<f64> {
    check_inputs(points, None)?;
    let sum: f64 = points
        .iter()
        .map(|p| mesh.closest_point(&pose.apply_inverse(p)).sq_distance)
        .sum();
    Ok(sum / points.len() as f64)
}

/// Unnormalized outlier-aware sum `Σ r²/σ² + log σ²` at rotation `r_t`ᵀ.
/// `hints` carries the previous closest triangle per point.
fn weighted_sum(
    r_t: &Matrix3<f64>,
    translation: &Vec3,
    mesh: &TemplateMesh,
    points: &[Vec3],
    log_var: &[f64],
    hints: &mut [usize],
    abort_above: f64,
    suffix_log_var: &[f64],
) -> Option<f64> {
    let mut sum = 0.0;
    for (i, p) in points.iter().enumerate() {
        let local = r_t * (p - translation);
        let c = mesh.closest_point_hinted(&local, hints[i]);
        hints[i] = c.triangle;
        sum += c.sq_distance * (-log_var[i]).exp() + log_var[i];
        // remaining terms are each at least their log σ²
        if sum + suffix_log_var[i + 1] > abort_above {
            return None;
        }
    }
    Some(sum)
}

fn suffix_sums(log_var: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; log_var.len() + 1];
    for i in (0..log_var.len()).rev() {
        out[i] = out[i + 1] + log_var[i];
    }
    out
}

/// Outlier-aware distance `(1/|L|) Σ [r²(X)/σ²(X) + log σ²(X)]`.
pub fn half_chamfer_weighted(
    pose: &Pose4DoF,
    mesh: &TemplateMesh,
    points: &[Vec3],
    log_var: &[f64],
) -> Result<f64> {
    check_inputs(points, Some(log_var))?;
    let mut hints = vec![0; points.len()];
    let suffix = suffix_sums(log_var);
    let sum = weighted_sum(
        &pose.rotation().transpose(),
        &pose.translation(),
        mesh,
        points,
        log_var,
        &mut hints,
        f64::INFINITY,
        &suffix,
    )
    .expect("no abort bound");
    Ok(sum / points.len() as f64)
}

/// Value and envelope gradient of [`half_chamfer_weighted`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGrad {
    pub value: f64,
    pub d_translation: Vec3,
    pub d_yaw: f64,
    pub d_log_var: Vec<f64>,
    /// Closest triangle and feature per point; the gradient is exact only
    /// while these stay fixed.
    pub features: Vec<(usize, Region)>,
}

pub fn half_chamfer_weighted_grad(
    pose: &Pose4DoF,
    mesh: &TemplateMesh,
    points: &[Vec3],
    log_var: &[f64],
) -> Result<AlignmentGrad> {
    check_inputs(points, Some(log_var))?;
    let n = points.len() as f64;
    let r = pose.rotation();
    let dr = yaw_rotation_derivative(pose.yaw());
    let t = pose.translation();
    let mut value = 0.0;
    let mut d_translation = Vec3::zeros();
    let mut d_yaw = 0.0;
    let mut d_log_var = Vec::with_capacity(points.len());
    let mut features = Vec::with_capacity(points.len());
    for (p, &s) in points.iter().zip(log_var) {
        let c = mesh.closest_point(&pose.apply_inverse(p));
        let inv_var = (-s).exp();
        value += c.sq_distance * inv_var + s;
        // r² = ‖X − (R c + T)‖² with c held fixed
        let e = p - (r * c.point + t);
        let w = 2.0 * inv_var / n;
        d_translation -= e * w;
        d_yaw -= w * e.dot(&(dr * c.point));
        d_log_var.push((1.0 - c.sq_distance * inv_var) / n);
        features.push((c.triangle, c.region));
    }
    Ok(AlignmentGrad {
        value: value / n,
        d_translation,
        d_yaw,
        d_log_var,
        features,
    })
}

/// Exhaustive search over bin-centre yaws with the translation held fixed.
/// Returns the best bin (lowest index on ties) and its loss.
pub fn yaw_bin_search(
    translation: &Vec3,
    mesh: &TemplateMesh,
    points: &[Vec3],
    log_var: &[f64],
    bins: &YawBins,
) -> Result<(usize, f64)> {
    check_inputs(points, Some(log_var))?;
    let mut hints = vec![0; points.len()];
    let suffix = suffix_sums(log_var);
    let mut best = (0usize, f64::INFINITY);
    for k in 0..bins.len() {
        let r_t = yaw_rotation(Pose4DoF::new(bins.centre(k), *translation).yaw()).transpose();
        // slack keeps rounding in the bound from discarding an exact tie
        let bound = best.1 + 1e-9 * (1.0 + best.1.abs());
        if let Some(sum) =
            weighted_sum(&r_t, translation, mesh, points, log_var, &mut hints, bound, &suffix)
        {
            if sum < best.1 {
                best = (k, sum);
            }
        }
    }
    Ok((best.0, best.1 / points.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::builtin_car_template;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn car() -> TemplateMesh {
        builtin_car_template(4.0, 1.6, 1.5).unwrap()
    }

    fn surface_points(mesh: &TemplateMesh, pose: &Pose4DoF, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| pose.apply(&mesh.sample_surface(&mut rng).0)).collect()
    }

    #[test]
    fn zero_on_surface() {
        let m = car();
        let pose = Pose4DoF::new(1.1, Vec3::new(2.0, 0.9, 15.0));
        let pts = surface_points(&m, &pose, 50, 1);
        assert!(half_chamfer(&pose, &m, &pts).unwrap() < 1e-20);
    }

    #[test]
    fn half_metre_off_a_face() {
        let m = car();
        // the left body face sits at x = -0.8; go 0.5 m outside, mid-height of the body
        let p = Vec3::new(-1.3, 0.4, 1.0);
        let v = half_chamfer(&Pose4DoF::identity(), &m, &[p]).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_points_and_length_mismatch_are_rejected() {
        let m = car();
        assert!(half_chamfer(&Pose4DoF::identity(), &m, &[]).is_err());
        let p = [Vec3::zeros()];
        assert!(half_chamfer_weighted(&Pose4DoF::identity(), &m, &p, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_log_variance_reduces_to_plain() {
        let m = car();
        let pose = Pose4DoF::new(0.4, Vec3::new(0.0, 0.9, 12.0));
        let pts: Vec<Vec3> = surface_points(&m, &pose, 30, 2)
            .iter()
            .enumerate()
            .map(|(i, p)| p + Vec3::new(0.01 * i as f64, 0.0, -0.02))
            .collect();
        let plain = half_chamfer(&pose, &m, &pts).unwrap();
        let weighted = half_chamfer_weighted(&pose, &m, &pts, &vec![0.0; pts.len()]).unwrap();
        assert_eq!(plain, weighted);
    }

    #[test]
    fn closed_form_optimum_of_one_point() {
        let m = car();
        // 2 m outside the right body face
        let p = Vec3::new(2.8, 0.4, 0.0);
        let v = half_chamfer_weighted(&Pose4DoF::identity(), &m, &[p], &[4f64.ln()]).unwrap();
        assert!((v - (1.0 + 4f64.ln())).abs() < 1e-12);
        assert!((v - 2.3863).abs() < 1e-4);
    }

    #[test]
    fn search_finds_exact_bin_with_zero_loss() {
        let m = car();
        let bins = YawBins::new(64).unwrap();
        let t = Vec3::new(-3.0, 0.9, 14.0);
        let pose = Pose4DoF::new(bins.centre(21), t);
        let pts = surface_points(&m, &pose, 400, 5);
        let (k, loss) = yaw_bin_search(&t, &m, &pts, &vec![0.0; pts.len()], &bins).unwrap();
        assert_eq!(k, 21);
        assert!(loss < 1e-20);
    }

    #[test]
    fn search_matches_reevaluation_and_manual_scan() {
        let m = car();
        let bins = YawBins::new(4).unwrap();
        let t = Vec3::new(0.0, 0.9, 10.0);
        let pts = [
            Vec3::new(0.9, 0.9, 11.5),
            Vec3::new(-0.2, 0.2, 8.3),
            Vec3::new(0.5, -0.1, 9.7),
        ];
        let lv = [0.2, -0.4, 0.0];
        let (k, loss) = yaw_bin_search(&t, &m, &pts, &lv, &bins).unwrap();
        let manual: Vec<f64> = (0..4)
            .map(|b| half_chamfer_weighted(&Pose4DoF::new(bins.centre(b), t), &m, &pts, &lv).unwrap())
            .collect();
        let mut best = 0;
        for b in 1..4 {
            if manual[b] < manual[best] {
                best = b;
            }
        }
        assert_eq!(k, best);
        assert_eq!(loss, manual[best]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = car();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = Pose4DoF::new(0.7, Vec3::new(1.0, 0.9, 11.0));
        let pts: Vec<Vec3> = surface_points(&m, &pose, 12, 4)
            .into_iter()
            .map(|p| p + Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)))
            .collect();
        let lv: Vec<f64> = (0..pts.len()).map(|_| rng.random_range(-2.0..1.0)).collect();
        let g = half_chamfer_weighted_grad(&pose, &m, &pts, &lv).unwrap();
        let f = |yaw: f64, t: Vec3, lv: &[f64]| {
            half_chamfer_weighted(&Pose4DoF::new(yaw, t), &m, &pts, lv).unwrap()
        };
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let fd = (f(pose.yaw(), pose.translation() + e, &lv)
                - f(pose.yaw(), pose.translation() - e, &lv))
                / (2.0 * h);
            assert!(rel(fd, g.d_translation[k]) < 1e-5, "T{k}: {fd} vs {}", g.d_translation[k]);
        }
        let fd = (f(pose.yaw() + h, pose.translation(), &lv) - f(pose.yaw() - h, pose.translation(), &lv)) / (2.0 * h);
        assert!(rel(fd, g.d_yaw) < 1e-5, "yaw: {fd} vs {}", g.d_yaw);
        for i in 0..lv.len() {
            let mut up = lv.clone();
            let mut dn = lv.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (f(pose.yaw(), pose.translation(), &up) - f(pose.yaw(), pose.translation(), &dn)) / (2.0 * h);
            assert!(rel(fd, g.d_log_var[i]) < 1e-5);
        }
    }
}
