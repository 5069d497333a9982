//! Training objectives and their gradients with respect to the network
//! outputs.
//!
//! Gradients through the nearest-point `min` hold the closest surface point
//! fixed (envelope gradient). The yaw chosen by the bin search is treated as
//! a constant in the backward pass.

mod alignment;
mod consistency;

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::TAU;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

pub use alignment::{
    half_chamfer, half_chamfer_weighted, half_chamfer_weighted_grad, yaw_bin_search,
    AlignmentGrad,
};
pub use consistency::{consistency_loss, consistency_terms, position_consistency, ConsistencyTerms};

use crate::error::{Error, Result};
use crate::geometry::{
    normalize_angle, yaw_rotation, yaw_rotation_derivative, EgoMotion, Pose4DoF, TemplateMesh,
    Vec3,
};

/// Uniform quantization of `[0, 2π)`; bin `k` is centred on `2πk/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YawBins {
    n: usize,
}

impl Default for YawBins {
    fn default() -> Self {
        YawBins { n: 64 }
    }
}

impl YawBins {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 yaw bins, got {n}")));
        }
        Ok(YawBins { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn centre(&self, k: usize) -> f64 {
        TAU * k as f64 / self.n as f64
    }

    pub fn nearest(&self, angle: f64) -> usize {
        let k = (normalize_angle(angle) / TAU * self.n as f64).round() as usize;
        k % self.n
    }
}

/// Learned per-point `log σ²`, one entry per input point.
#[derive(Debug, Clone, PartialEq)]
pub struct PerPointVariance {
    log_var: Vec<f64>,
}

impl PerPointVariance {
    pub fn new(log_var: Vec<f64>) -> Result<Self> {
        if log_var.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("log-variances must be finite"));
        }
        Ok(PerPointVariance { log_var })
    }

    pub fn zeros(n: usize) -> Self {
        PerPointVariance {
            log_var: vec![0.0; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.log_var
    }

    pub fn len(&self) -> usize {
        self.log_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_var.is_empty()
    }
}

/// `-log softmax(logits)[target]`, stabilized by subtracting the max.
pub fn yaw_cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    Ok(yaw_cross_entropy_grad(logits, target)?.0)
}

/// Cross-entropy and its gradient `softmax(logits) - onehot(target)`.
pub fn yaw_cross_entropy_grad(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "target bin {target} out of range for {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("logits must be finite"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let loss = max + sum.ln() - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss.max(0.0), grad))
}

/// Softmax with the max subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Two-argument arctangent decode of a `(sin, cos)`-style head, in `[0, 2π)`.
/// `(0, 0)` decodes to 0.
pub fn arctan_yaw(head: [f64; 2]) -> f64 {
    if head[0] == 0.0 && head[1] == 0.0 {
        0.0
    } else {
        normalize_angle(head[0].atan2(head[1]))
    }
}

/// Index of the largest logit (first on ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub alignment: f64,
    pub yaw_ce: f64,
    pub consistency_centre: f64,
    pub consistency_front: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn consistency(&self) -> f64 {
        self.consistency_centre + self.consistency_front
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alignment: f64,
    pub yaw: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alignment: 1.0,
            yaw: 1.0,
            consistency: 1.0,
        }
    }
}

/// Switches for the composite objective; the defaults are the full method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Use the learned variances; when off, `σ² = 1` for every point.
    pub outlier_aware: bool,
    /// Add the centre and front keypoint consistency terms.
    pub consistency: bool,
    /// Frame offsets `j = 1..=horizon` compared inside a track.
    pub horizon: usize,
    /// How the yaw head enters the keypoint positions of the consistency
    /// terms.
    pub consistency_yaw: ConsistencyYaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyYaw {
    /// Keypoints of the decoded pose (argmax bin or arctangent); only the
    /// translations receive gradient.
    Hard,
    /// Bin heads place the keypoint at its expectation under the softmax,
    /// `T + Σ_k p_k R(θ_k) X0`, and the arctangent head at `T + R(θ) X0`;
    /// both translation and yaw head receive gradient. Equal to the hard
    /// keypoint for a one-hot softmax.
    Expected,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            outlier_aware: true,
            consistency: true,
            horizon: 5,
            consistency_yaw: ConsistencyYaw::Expected,
        }
    }
}

/// Raw yaw head output of one instance.
#[derive(Debug, Clone, PartialEq)]
pub enum YawHead {
    /// One logit per yaw bin.
    Logits(Vec<f64>),
    /// Two reals decoded with `atan2(x1, x2)`.
    Vector([f64; 2]),
}

impl YawHead {
    /// Hard decode: argmax bin centre, or the arctangent.
    pub fn decode(&self, bins: &YawBins) -> f64 {
        match self {
            YawHead::Logits(l) => bins.centre(argmax(l)),
            YawHead::Vector(v) => arctan_yaw(*v),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            YawHead::Logits(l) => l.len(),
            YawHead::Vector(_) => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One instance of a batch with the network's outputs for it.
#[derive(Debug, Clone)]
pub struct InstancePrediction<'a> {
    /// Identifier reported in diagnostics.
    pub id: usize,
    pub points: &'a [Vec3],
    pub translation: Vec3,
    pub yaw: YawHead,
    pub log_var: &'a [f64],
}

/// A track inside a batch: member indices in frame order, with the camera
/// pose (in the sequence's world frame) of each member's frame.
#[derive(Debug, Clone)]
pub struct BatchTrack {
    pub members: Vec<usize>,
    pub camera_poses: Vec<EgoMotion>,
}

/// Gradient of the total loss with respect to one instance's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrad {
    pub translation: Vec3,
    pub yaw_head: Vec<f64>,
    pub log_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub grads: Vec<PredictionGrad>,
    /// Bin chosen by the search, per instance (bin heads only).
    pub best_bins: Vec<Option<usize>>,
    /// Hash of the discrete choices behind the gradient: searched bins,
    /// closest template features and decoded bins used by consistency.
    pub fingerprint: u64,
}

/// Keypoint position of one prediction and its derivative with respect to
/// each yaw head output (all zero in hard mode).
fn keypoint_position(
    inst: &InstancePrediction<'_>,
    keypoint: &Vec3,
    bins: &YawBins,
    mode: ConsistencyYaw,
) -> (Vec3, Vec<Vec3>) {
    let t = inst.translation;
    match (mode, &inst.yaw) {
        (ConsistencyYaw::Hard, head) => {
            let pose = Pose4DoF::new(head.decode(bins), t);
            (pose.apply(keypoint), vec![Vec3::zeros(); head.len()])
        }
        (ConsistencyYaw::Expected, YawHead::Logits(logits)) => {
            let probs = softmax(logits);
            let rotated: Vec<Vec3> = (0..logits.len())
                .map(|k| yaw_rotation(bins.centre(k)) * keypoint)
                .collect();
            let mean: Vec3 = rotated.iter().zip(&probs).map(|(r, p)| r * *p).sum();
            let jac = rotated.iter().zip(&probs).map(|(r, p)| (r - mean) * *p).collect();
            (t + mean, jac)
        }
        (ConsistencyYaw::Expected, YawHead::Vector(v)) => {
            let yaw = arctan_yaw(*v);
            let d_yaw = yaw_rotation_derivative(yaw) * keypoint;
            let r2 = v[0] * v[0] + v[1] * v[1];
            let jac = if r2 > 0.0 {
                vec![d_yaw * (v[1] / r2), d_yaw * (-v[0] / r2)]
            } else {
                vec![Vec3::zeros(); 2]
            };
            (t + yaw_rotation(yaw) * keypoint, jac)
        }
    }
}

/// Composite batch objective: mean outlier-aware alignment at the searched
/// yaw, mean yaw cross-entropy against the searched bin, and the centre and
/// front keypoint consistency terms.
pub fn total_loss(
    batch: &[InstancePrediction<'_>],
    tracks: &[BatchTrack],
    mesh: &TemplateMesh,
    bins: &YawBins,
    config: &LossConfig,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = batch.len() as f64;
    let w = config.weights;
    let mut breakdown = LossBreakdown::default();
    let mut grads = Vec::with_capacity(batch.len());
    let mut best_bins = Vec::with_capacity(batch.len());
    let mut hasher = DefaultHasher::new();

    for inst in batch {
        if inst.log_var.len() != inst.points.len() {
            return Err(Error::invalid(format!(
                "instance {}: {} log-variances for {} points",
                inst.id,
                inst.log_var.len(),
                inst.points.len()
            )));
        }
        let zeros;
        let log_var = if config.outlier_aware {
            inst.log_var
        } else {
            zeros = vec![0.0; inst.points.len()];
            &zeros[..]
        };
        let (align, ce, yaw_grad, best) = match &inst.yaw {
            YawHead::Logits(logits) => {
                if logits.len() != bins.len() {
                    return Err(Error::invalid(format!(
                        "instance {}: {} logits for {} bins",
                        inst.id,
                        logits.len(),
                        bins.len()
                    )));
                }
                let (best, _) =
                    yaw_bin_search(&inst.translation, mesh, inst.points, log_var, bins)?;
                let pose = Pose4DoF::new(bins.centre(best), inst.translation);
                let align = half_chamfer_weighted_grad(&pose, mesh, inst.points, log_var)?;
                let (ce, ce_grad) = yaw_cross_entropy_grad(logits, best)?;
                let yaw_grad: Vec<f64> = ce_grad.iter().map(|g| g * w.yaw / n).collect();
                (align, ce, yaw_grad, Some(best))
            }
            YawHead::Vector(v) => {
                let yaw = arctan_yaw(*v);
                let pose = Pose4DoF::new(yaw, inst.translation);
                let align = half_chamfer_weighted_grad(&pose, mesh, inst.points, log_var)?;
                let r2 = v[0] * v[0] + v[1] * v[1];
                let scale = w.alignment / n * align.d_yaw;
                let yaw_grad = if r2 > 0.0 {
                    vec![scale * v[1] / r2, -scale * v[0] / r2]
                } else {
                    vec![0.0, 0.0]
                };
                (align, 0.0, yaw_grad, None)
            }
        };
        if !align.value.is_finite() || !ce.is_finite() {
            return Err(Error::NonFiniteLoss {
                instance: inst.id,
                detail: format!("alignment {}, yaw cross-entropy {}", align.value, ce),
            });
        }
        best.hash(&mut hasher);
        align.features.hash(&mut hasher);
        breakdown.alignment += align.value;
        breakdown.yaw_ce += ce;
        let log_var_grad = if config.outlier_aware {
            align.d_log_var.iter().map(|g| g * w.alignment / n).collect()
        } else {
            vec![0.0; inst.points.len()]
        };
        grads.push(PredictionGrad {
            translation: align.d_translation * (w.alignment / n),
            yaw_head: yaw_grad,
            log_var: log_var_grad,
        });
        best_bins.push(best);
    }
    breakdown.alignment /= n;
    breakdown.yaw_ce /= n;

    if config.consistency && !tracks.is_empty() {
        let mut sums = [0.0f64; 2];
        let mut pairs = 0usize;
        let mut track_grads: Vec<(usize, [Vec3; 2], Vec<f64>)> = Vec::new();
        for track in tracks {
            for &m in &track.members {
                if let Some(YawHead::Logits(l)) = batch.get(m).map(|b| &b.yaw) {
                    argmax(l).hash(&mut hasher);
                }
            }
            if let Some(&bad) = track.members.iter().find(|&&m| m >= batch.len()) {
                return Err(Error::invalid(format!("track references instance {bad}")));
            }
            let mut per_kp = Vec::with_capacity(2);
            let mut jacobians = Vec::with_capacity(2);
            for kp in [mesh.keypoint_centre(), mesh.keypoint_front()] {
                let (positions, jac): (Vec<Vec3>, Vec<Vec<Vec3>>) = track
                    .members
                    .iter()
                    .map(|&m| keypoint_position(&batch[m], &kp, bins, config.consistency_yaw))
                    .unzip();
                per_kp.push(position_consistency(&positions, &track.camera_poses, config.horizon)?);
                jacobians.push(jac);
            }
            sums[0] += per_kp[0].sum;
            sums[1] += per_kp[1].sum;
            pairs += per_kp[0].pairs;
            for (k, &m) in track.members.iter().enumerate() {
                let d = [per_kp[0].d_translation[k], per_kp[1].d_translation[k]];
                let yaw: Vec<f64> = (0..batch[m].yaw.len())
                    .map(|j| jacobians[0][k][j].dot(&d[0]) + jacobians[1][k][j].dot(&d[1]))
                    .collect();
                track_grads.push((m, d, yaw));
            }
        }
        if pairs > 0 {
            let p = pairs as f64;
            breakdown.consistency_centre = sums[0] / p;
            breakdown.consistency_front = sums[1] / p;
            let scale = w.consistency / p;
            for (m, g, yaw) in track_grads {
                grads[m].translation += (g[0] + g[1]) * scale;
                for (dst, v) in grads[m].yaw_head.iter_mut().zip(yaw) {
                    *dst += v * scale;
                }
            }
        }
    }

    breakdown.total = w.alignment * breakdown.alignment
        + w.yaw * breakdown.yaw_ce
        + w.consistency * (breakdown.consistency_centre + breakdown.consistency_front);
    Ok(LossOutput {
        breakdown,
        grads,
        best_bins,
        fingerprint: hasher.finish(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::builtin_car_template;

    #[test]
    fn bins_cover_circle() {
        let bins = YawBins::new(64).unwrap();
        assert_eq!(bins.centre(0), 0.0);
        assert!((bins.centre(16) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(bins.nearest(-0.01), 0);
        assert_eq!(bins.nearest(TAU - 0.01), 0);
        assert!(YawBins::new(1).is_err());
    }

    #[test]
    fn uniform_logits_cross_entropy_is_log_n() {
        let ce = yaw_cross_entropy(&[0.3; 64], 17).unwrap();
        assert!((ce - 64f64.ln()).abs() < 1e-12);
        assert!((64f64.ln() - 4.1589).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_vanishes_with_large_gap() {
        let mut logits = vec![0.0; 64];
        let mut prev = f64::INFINITY;
        for gap in [1.0, 5.0, 10.0, 20.0, 30.0] {
            logits[3] = gap;
            let ce = yaw_cross_entropy(&logits, 3).unwrap();
            assert!(ce < prev);
            prev = ce;
        }
        assert!(prev < 1e-8 && prev >= 0.0);
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        assert!(yaw_cross_entropy(&[0.0; 4], 4).is_err());
    }

    #[test]
    fn arctan_decode() {
        assert_eq!(arctan_yaw([0.0, 1.0]), 0.0);
        assert!((arctan_yaw([1.0, 0.0]) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(arctan_yaw([0.0, 0.0]), 0.0);
    }

    #[test]
    fn single_instance_without_track_sums_two_terms() {
        let mesh = builtin_car_template(4.0, 1.6, 1.5).unwrap();
        let bins = YawBins::new(8).unwrap();
        let pts = vec![Vec3::new(0.9, 0.0, 10.0), Vec3::new(0.5, 0.2, 9.0)];
        let lv = vec![0.1, -0.2];
        let inst = InstancePrediction {
            id: 0,
            points: &pts,
            translation: Vec3::new(0.0, 0.0, 10.0),
            yaw: YawHead::Logits(vec![0.1, 0.0, 0.3, 0.0, 0.0, 0.2, 0.0, 0.0]),
            log_var: &lv,
        };
        let out = total_loss(&[inst], &[], &mesh, &bins, &LossConfig::default()).unwrap();
        let b = out.breakdown;
        assert_eq!(b.consistency(), 0.0);
        assert_eq!(b.total, b.alignment + b.yaw_ce);
    }
}
