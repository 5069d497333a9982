//! Per-instance direct fitting without learning: alternate an exhaustive
//! yaw-bin search with weighted translation updates.

use crate::error::{Error, Result};
use crate::geometry::{Pose4DoF, TemplateMesh, Vec3};
use crate::losses::{half_chamfer_weighted, yaw_bin_search, YawBins};
use crate::tracking::pseudo_centre;

/// Residuals below this (metres) are not up-weighted further.
pub const MIN_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectFit {
    pub pose: Pose4DoF,
    /// Iterations of both starts together.
    pub iterations: usize,
    /// Outlier-aware distance at the returned pose, with every variance at
    /// its floored optimum.
    pub loss: f64,
    pub converged: bool,
}

/// Per-point `log σ²` that minimizes the outlier-aware distance at `pose`,
/// with `σ` floored at [`MIN_SIGMA`].
fn optimal_log_var(pose: &Pose4DoF, mesh: &TemplateMesh, points: &[Vec3]) -> Vec<f64> {
    points
        .iter()
        .map(|p| {
            let d = mesh.closest_point(&pose.apply_inverse(p)).sq_distance;
            d.max(MIN_SIGMA * MIN_SIGMA).ln()
        })
        .collect()
}

struct Run {
    pose: Pose4DoF,
    iterations: usize,
    converged: bool,
}

/// The alternation from `translation`. A `locked` bin replaces the search
/// until the translation settles under it (or half the budget is spent).
fn alternate(
    points: &[Vec3],
    mesh: &TemplateMesh,
    bins: &YawBins,
    mut translation: Vec3,
    mut locked: Option<usize>,
    max_iterations: usize,
) -> Result<Run> {
    let mut log_var = vec![0.0; points.len()];
    let mut bin = None;
    for it in 0..max_iterations {
        if it >= max_iterations / 2 {
            locked = None;
        }
        let best = match locked {
            Some(b) => b,
            None => yaw_bin_search(&translation, mesh, points, &log_var, bins)?.0,
        };
        let pose = Pose4DoF::new(bins.centre(best), translation);
        let r = pose.rotation();
        let (mut num, mut den) = (Vec3::zeros(), 0.0);
        for (p, lv) in points.iter().zip(log_var.iter_mut()) {
            let c = mesh.closest_point(&pose.apply_inverse(p));
            let var = c.sq_distance.max(MIN_SIGMA * MIN_SIGMA);
            *lv = var.ln();
            let e = p - (r * c.point + translation);
            num += e / var;
            den += 1.0 / var;
        }
        let step = num / den;
        translation += step;
        if step.norm() < 1e-3 {
            locked = None;
        }
        let same_bin = bin == Some(best);
        bin = Some(best);
        if same_bin && locked.is_none() && step.norm() < 1e-4 {
            return Ok(Run {
                pose: Pose4DoF::new(bins.centre(best), translation),
                iterations: it + 1,
                converged: true,
            });
        }
    }
    Ok(Run {
        pose: Pose4DoF::new(bins.centre(bin.unwrap_or(0)), translation),
        iterations: max_iterations,
        converged: false,
    })
}

/// Starts at the per-axis median. Each iteration picks the best yaw bin
/// for the current translation, then sets every point's variance to its
/// squared residual (floored at `MIN_SIGMA²`, the per-point optimum of the
/// outlier-aware distance) and takes the Newton step of that weighted
/// least-squares problem in the translation.
///
/// A partial view often fits a half-turned car almost as well, so the
/// alternation is restarted with the opposite yaw bin held until the
/// translation settles, and the start with the lower loss wins.
/// `max_iterations` bounds each start.
pub fn fit_direct(
    points: &[Vec3],
    mesh: &TemplateMesh,
    bins: &YawBins,
    max_iterations: usize,
) -> Result<DirectFit> {
    if points.is_empty() {
        return Err(Error::invalid("cannot fit an empty point set"));
    }
    let first = alternate(points, mesh, bins, pseudo_centre(points)?, None, max_iterations)?;
    let opposite = bins.nearest(first.pose.yaw() + std::f64::consts::PI);
    let second = alternate(points, mesh, bins, first.pose.translation(), Some(opposite), max_iterations)?;
    let loss = |pose: &Pose4DoF| half_chamfer_weighted(pose, mesh, points, &optimal_log_var(pose, mesh, points));
    let (l1, l2) = (loss(&first.pose)?, loss(&second.pose)?);
    let (best, value) = if l2 < l1 { (&second, l2) } else { (&first, l1) };
    Ok(DirectFit {
        pose: best.pose,
        iterations: first.iterations + second.iterations,
        loss: value,
        converged: best.converged,
    })
}
