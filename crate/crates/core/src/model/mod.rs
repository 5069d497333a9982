//! The pose network: a shared per-point MLP with max-pooling, heads for
//! translation, yaw and per-point log-variance, plus training and
//! checkpoints.

pub mod autodiff;
mod checkpoint;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path, Checkpoint, CHECKPOINT_VERSION};

use self::autodiff::{Matrix, NodeId, Tape};
use crate::error::{Error, Result};
use crate::geometry::{EgoMotion, Pose4DoF, TemplateMesh, Vec3};
use crate::losses::{
    total_loss, BatchTrack, InstancePrediction, LossBreakdown, LossConfig, LossOutput,
    PerPointVariance, YawBins, YawHead,
};
use crate::tracking::pseudo_centre;

/// Output log-variances are clamped to `[-LOG_VAR_LIMIT, LOG_VAR_LIMIT]`.
pub const LOG_VAR_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawHeadKind {
    /// One logit per yaw bin, supervised by the bin search.
    Bins,
    /// Two reals decoded with `atan2`, trained through the alignment loss.
    Arctan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output widths of the shared per-point layers.
    pub encoder_widths: Vec<usize>,
    pub head_hidden: usize,
    pub variance_hidden: usize,
    pub yaw_head: YawHeadKind,
    /// Give the variance head its own point encoder.
    pub separate_variance_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_widths: vec![64, 128, 256],
            head_hidden: 128,
            variance_hidden: 64,
            yaw_head: YawHeadKind::Bins,
            separate_variance_encoder: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty()
            || self.encoder_widths.contains(&0)
            || self.head_hidden == 0
            || self.variance_hidden == 0
        {
            return Err(Error::invalid(format!("invalid model config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_bins: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            lr_decay_factor: 0.3,
            lr_decay_every_epochs: 30,
            epochs: 150,
            batch_size: 64,
            n_bins: 64,
            seed: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.lr_decay_factor > 0.0
            && self.lr_decay_every_epochs > 0
            && self.epochs >= 1
            && self.batch_size > 0
            && self.n_bins >= 2
            && self.loss.horizon >= 1;
        if !ok {
            return Err(Error::invalid(format!("invalid training config {self:?}")));
        }
        self.model.validate()
    }

    /// Step size used throughout epoch `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = (epoch / self.lr_decay_every_epochs) as i32;
        self.learning_rate * self.lr_decay_factor.powi(decays)
    }
}

/// Shape of every parameter tensor, in storage order.
fn layout(config: &ModelConfig, n_bins: usize) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let encoder = |prefix: &str, out: &mut Vec<(String, usize, usize)>| {
        let mut fan_in = 3;
        for (k, &w) in config.encoder_widths.iter().enumerate() {
            out.push((format!("{prefix}{k}.weight"), fan_in, w));
            out.push((format!("{prefix}{k}.bias"), 1, w));
            fan_in = w;
        }
    };
    encoder("encoder", &mut out);
    if config.separate_variance_encoder {
        encoder("variance_encoder", &mut out);
    }
    let global = *config.encoder_widths.last().unwrap_or(&0);
    let local = *config.encoder_widths.first().unwrap_or(&0);
    let yaw_out = match config.yaw_head {
        YawHeadKind::Bins => n_bins,
        YawHeadKind::Arctan => 2,
    };
    for (name, outputs) in [("translation", 3), ("yaw", yaw_out)] {
        out.push((format!("{name}.hidden.weight"), global, config.head_hidden));
        out.push((format!("{name}.hidden.bias"), 1, config.head_hidden));
        out.push((format!("{name}.out.weight"), config.head_hidden, outputs));
        out.push((format!("{name}.out.bias"), 1, outputs));
    }
    out.push(("variance.point.weight".into(), local, config.variance_hidden));
    out.push(("variance.global.weight".into(), global, config.variance_hidden));
    out.push(("variance.hidden.bias".into(), 1, config.variance_hidden));
    out.push(("variance.out.weight".into(), config.variance_hidden, 1));
    out.push(("variance.out.bias".into(), 1, 1));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    n_bins: usize,
    tensors: Vec<Matrix>,
}

impl ModelParams {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights and zero biases.
    pub fn init(config: &ModelConfig, n_bins: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout(config, n_bins)
            .into_iter()
            .map(|(name, r, c)| {
                let mut m = Matrix::zeros(r, c);
                if name.ends_with("weight") {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    m.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-a..a));
                }
                m
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            n_bins,
            tensors,
        })
    }

    pub fn zeros(config: &ModelConfig, n_bins: usize) -> Result<Self> {
        config.validate()?;
        let tensors = layout(config, n_bins)
            .into_iter()
            .map(|(_, r, c)| Matrix::zeros(r, c))
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            n_bins,
            tensors,
        })
    }

    /// Rebuilds parameters from values in storage order.
    pub fn from_flat(config: &ModelConfig, n_bins: usize, values: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(config, n_bins)?;
        if values.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} parameter values, architecture needs {}",
                values.len(),
                params.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter value"));
        }
        let mut offset = 0;
        for t in &mut params.tensors {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn names(&self) -> Vec<String> {
        layout(&self.config, self.n_bins).into_iter().map(|l| l.0).collect()
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Mutable access to the scalar at flat position `index`.
    pub fn value_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for t in &mut self.tensors {
            let n = t.data().len();
            if index < n {
                return t.data_mut().get_mut(index);
            }
            index -= n;
        }
        None
    }
}

/// Network outputs for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub translation: Vec3,
    pub yaw: YawHead,
    pub log_var: PerPointVariance,
}

impl Prediction {
    pub fn yaw_logits(&self) -> Option<&[f64]> {
        match &self.yaw {
            YawHead::Logits(l) => Some(l),
            YawHead::Vector(_) => None,
        }
    }

    /// Largest softmax probability of the yaw logits; 1 for the arctangent
    /// head.
    pub fn yaw_confidence(&self) -> f64 {
        match &self.yaw {
            YawHead::Logits(l) => {
                let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                1.0 / l.iter().map(|v| (v - m).exp()).sum::<f64>()
            }
            YawHead::Vector(_) => 1.0,
        }
    }
}

struct Outputs {
    residual: NodeId,
    yaw: NodeId,
    log_var: NodeId,
}

fn encode(
    tape: &mut Tape,
    input: NodeId,
    layers: &[(NodeId, NodeId)],
) -> Result<(NodeId, NodeId)> {
    let mut h = input;
    let mut first = None;
    for &(w, b) in layers {
        let a = tape.affine(h, w, b)?;
        h = tape.relu(a);
        first.get_or_insert(h);
    }
    let global = tape.max_pool(h)?;
    Ok((first.expect("at least one layer"), global))
}

fn mlp_head(tape: &mut Tape, g: NodeId, p: &[NodeId]) -> Result<NodeId> {
    let a = tape.affine(g, p[0], p[1])?;
    let h = tape.relu(a);
    tape.affine(h, p[2], p[3])
}

/// Records the network on `tape`. `params` are the parameter nodes in
/// storage order; `centred` is the median-centred `n×3` input.
fn build_graph(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &[NodeId],
    centred: Matrix,
) -> Result<Outputs> {
    let layers = config.encoder_widths.len();
    let pairs = |s: &[NodeId]| -> Vec<(NodeId, NodeId)> {
        s.chunks(2).map(|c| (c[0], c[1])).collect()
    };
    let mut at = 0;
    let encoder = pairs(&params[at..at + 2 * layers]);
    at += 2 * layers;
    let variance_encoder = if config.separate_variance_encoder {
        at += 2 * layers;
        Some(pairs(&params[at - 2 * layers..at]))
    } else {
        None
    };
    let translation = &params[at..at + 4];
    let yaw = &params[at + 4..at + 8];
    let variance = &params[at + 8..at + 13];

    let x = tape.constant(centred);
    let (local, global) = encode(tape, x, &encoder)?;
    let (v_local, v_global) = match variance_encoder {
        Some(layers) => encode(tape, x, &layers)?,
        None => (local, global),
    };
    let residual = mlp_head(tape, global, translation)?;
    let yaw = mlp_head(tape, global, yaw)?;

    let point = tape.affine(v_local, variance[0], variance[2])?;
    let glob = tape.matmul(v_global, variance[1])?;
    let mixed = tape.add_row(point, glob)?;
    let hidden = tape.relu(mixed);
    let raw = tape.affine(hidden, variance[3], variance[4])?;
    let log_var = tape.clamp(raw, -LOG_VAR_LIMIT, LOG_VAR_LIMIT);
    Ok(Outputs {
        residual,
        yaw,
        log_var,
    })
}

fn centred_input(points: &[Vec3]) -> Result<(Vec3, Matrix)> {
    let median = pseudo_centre(points)?;
    let data = points
        .iter()
        .flat_map(|p| {
            let c = p - median;
            [c.x, c.y, c.z]
        })
        .collect();
    Ok((median, Matrix::from_vec(points.len(), 3, data)?))
}

fn read_yaw(config: &ModelConfig, m: &Matrix) -> YawHead {
    match config.yaw_head {
        YawHeadKind::Bins => YawHead::Logits(m.data().to_vec()),
        YawHeadKind::Arctan => YawHead::Vector([m.data()[0], m.data()[1]]),
    }
}

/// Runs the network on one instance's points (camera frame).
pub fn forward(params: &ModelParams, points: &[Vec3]) -> Result<Prediction> {
    if points.is_empty() {
        return Err(Error::invalid("forward on an empty point cloud"));
    }
    let (median, centred) = centred_input(points)?;
    let mut tape = Tape::new();
    let nodes: Vec<NodeId> = params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build_graph(&mut tape, &params.config, &nodes, centred)?;
    let r = tape.value(out.residual).data();
    Ok(Prediction {
        translation: median + Vec3::new(r[0], r[1], r[2]),
        yaw: read_yaw(&params.config, tape.value(out.yaw)),
        log_var: PerPointVariance::new(tape.value(out.log_var).data().to_vec())?,
    })
}

/// [`forward`] for parameters built with the two-output arctangent yaw head.
pub fn forward_arctan(params: &ModelParams, points: &[Vec3]) -> Result<Prediction> {
    if params.config.yaw_head != YawHeadKind::Arctan {
        return Err(Error::invalid("parameters do not have an arctangent yaw head"));
    }
    forward(params, points)
}

/// Pose from the argmax bin (or the arctangent) and the predicted translation.
pub fn decode_pose(pred: &Prediction, bins: &YawBins) -> Pose4DoF {
    Pose4DoF::new(pred.yaw.decode(bins), pred.translation)
}

/// What training sees of one detection. Deliberately carries no ground
/// truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub instance_id: u64,
    pub frame_id: u64,
    pub points: Vec<Vec3>,
}

/// A track over observations: indices in frame order with the camera pose
/// of each member's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrack {
    pub members: Vec<usize>,
    pub camera_poses: Vec<EgoMotion>,
}

/// Loss and parameter gradient of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: LossOutput,
    /// One tensor per parameter, in storage order.
    pub grads: Vec<Matrix>,
    /// Combined network and loss fingerprint; see [`Tape::fingerprint`].
    pub fingerprint: u64,
}

/// Forward pass, composite loss and backward pass for a batch. `tracks`
/// index into `batch`.
pub fn loss_and_gradient(
    params: &ModelParams,
    batch: &[&Observation],
    tracks: &[BatchTrack],
    mesh: &TemplateMesh,
    bins: &YawBins,
    loss: &LossConfig,
) -> Result<BatchGradient> {
    if params.config.yaw_head == YawHeadKind::Bins && params.n_bins != bins.len() {
        return Err(Error::invalid(format!(
            "model has {} yaw bins, loss uses {}",
            params.n_bins,
            bins.len()
        )));
    }
    let mut tape = Tape::new();
    let nodes: Vec<NodeId> = params.tensors.iter().map(|t| tape.variable(t.clone())).collect();
    let mut outputs = Vec::with_capacity(batch.len());
    let mut medians = Vec::with_capacity(batch.len());
    for obs in batch {
        if obs.points.is_empty() {
            return Err(Error::invalid(format!("instance {} has no points", obs.instance_id)));
        }
        let (median, centred) = centred_input(&obs.points)?;
        outputs.push(build_graph(&mut tape, &params.config, &nodes, centred)?);
        medians.push(median);
    }
    let preds: Vec<InstancePrediction<'_>> = batch
        .iter()
        .zip(&outputs)
        .zip(&medians)
        .map(|((obs, out), median)| {
            let r = tape.value(out.residual).data();
            InstancePrediction {
                id: obs.instance_id as usize,
                points: &obs.points,
                translation: median + Vec3::new(r[0], r[1], r[2]),
                yaw: read_yaw(&params.config, tape.value(out.yaw)),
                log_var: tape.value(out.log_var).data(),
            }
        })
        .collect();
    let result = total_loss(&preds, tracks, mesh, bins, loss)?;
    if !result.breakdown.total.is_finite() {
        let culprit = preds
            .iter()
            .find(|p| !p.translation.iter().all(|v| v.is_finite()))
            .unwrap_or(&preds[0]);
        return Err(Error::NonFiniteLoss {
            instance: culprit.id,
            detail: format!("total loss {:?}", result.breakdown),
        });
    }
    drop(preds);

    let mut partials = Vec::with_capacity(3 * outputs.len());
    for (out, g) in outputs.iter().zip(&result.grads) {
        let t = g.translation;
        partials.push((out.residual, Matrix::from_vec(1, 3, vec![t.x, t.y, t.z])?));
        partials.push((out.yaw, Matrix::from_vec(1, g.yaw_head.len(), g.yaw_head.clone())?));
        partials.push((out.log_var, Matrix::from_vec(g.log_var.len(), 1, g.log_var.clone())?));
    }
    let root = tape.custom(result.breakdown.total, partials)?;
    let mut grads = tape.backward(root)?;
    let grads = nodes
        .iter()
        .zip(&params.tensors)
        .map(|(&n, t)| grads.take(n).unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols())))
        .collect();
    let fingerprint = tape.fingerprint() ^ result.fingerprint.rotate_left(1);
    Ok(BatchGradient {
        loss: result,
        grads,
        fingerprint,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &[Matrix], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for (k, g) in grads.iter().enumerate() {
            let p = params.tensors[k].data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for i in 0..g.data().len() {
                let gi = g.data()[i];
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * gi;
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPSILON);
            }
        }
    }
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub epochs_completed: usize,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let params = ModelParams::init(&config.model, config.n_bins, config.seed)?;
        let adam = AdamState::new(&params);
        Ok(TrainState {
            params,
            adam,
            epochs_completed: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0-based epoch index.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Instance-weighted mean of the batch losses seen during the epoch.
    pub breakdown: LossBreakdown,
}

fn check_tracks(observations: &[Observation], tracks: &[TrainingTrack]) -> Result<Vec<bool>> {
    let mut used = vec![false; observations.len()];
    for (t, track) in tracks.iter().enumerate() {
        if track.members.len() != track.camera_poses.len() {
            return Err(Error::invalid(format!(
                "track {t}: {} members, {} camera poses",
                track.members.len(),
                track.camera_poses.len()
            )));
        }
        for &m in &track.members {
            if m >= observations.len() || used[m] {
                return Err(Error::invalid(format!("track {t}: bad or repeated member {m}")));
            }
            used[m] = true;
        }
    }
    Ok(used)
}

/// Adam on the composite loss over shuffled mini-batches. Tracks are kept
/// whole inside a batch; a batch is closed once it holds at least
/// `batch_size` instances. Training resumes from `state` when given and
/// stops after `config.epochs` epochs in total. `on_epoch` runs after each
/// epoch with the updated state.
pub fn train(
    observations: &[Observation],
    tracks: &[TrainingTrack],
    mesh: &TemplateMesh,
    config: &TrainConfig,
    state: Option<TrainState>,
    mut on_epoch: impl FnMut(&EpochRecord, &TrainState) -> Result<()>,
) -> Result<(TrainState, Vec<EpochRecord>)> {
    config.validate()?;
    if observations.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let bins = YawBins::new(config.n_bins)?;
    let mut state = match state {
        Some(s) => {
            if s.params.config != config.model || s.params.n_bins != config.n_bins {
                return Err(Error::invalid("checkpoint architecture differs from the config"));
            }
            s
        }
        None => TrainState::new(config)?,
    };
    let in_track = check_tracks(observations, tracks)?;
    let mut units: Vec<Vec<usize>> = tracks.iter().map(|t| t.members.clone()).collect();
    let mut unit_track: Vec<Option<usize>> = (0..tracks.len()).map(Some).collect();
    for (i, used) in in_track.iter().enumerate() {
        if !used {
            units.push(vec![i]);
            unit_track.push(None);
        }
    }

    let mut history = Vec::new();
    for epoch in state.epochs_completed..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..units.len()).collect();
        order.shuffle(&mut rng);

        let mut sum = LossBreakdown::default();
        let mut seen = 0usize;
        let mut start = 0;
        while start < order.len() {
            let mut end = start;
            let mut count = 0;
            while end < order.len() && count < config.batch_size {
                count += units[order[end]].len();
                end += 1;
            }
            let mut batch: Vec<&Observation> = Vec::with_capacity(count);
            let mut batch_tracks = Vec::new();
            for &u in &order[start..end] {
                let first = batch.len();
                batch.extend(units[u].iter().map(|&i| &observations[i]));
                if let Some(t) = unit_track[u] {
                    batch_tracks.push(BatchTrack {
                        members: (first..batch.len()).collect(),
                        camera_poses: tracks[t].camera_poses.clone(),
                    });
                }
            }
            let g = loss_and_gradient(&state.params, &batch, &batch_tracks, mesh, &bins, &config.loss)?;
            state.adam.update(&mut state.params, &g.grads, lr);
            let w = batch.len() as f64;
            let b = g.loss.breakdown;
            sum.alignment += w * b.alignment;
            sum.yaw_ce += w * b.yaw_ce;
            sum.consistency_centre += w * b.consistency_centre;
            sum.consistency_front += w * b.consistency_front;
            sum.total += w * b.total;
            seen += batch.len();
            start = end;
        }
        let n = seen as f64;
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            breakdown: LossBreakdown {
                alignment: sum.alignment / n,
                yaw_ce: sum.yaw_ce / n,
                consistency_centre: sum.consistency_centre / n,
                consistency_front: sum.consistency_front / n,
                total: sum.total / n,
            },
        };
        state.epochs_completed = epoch + 1;
        on_epoch(&record, &state)?;
        history.push(record);
    }
    Ok((state, history))
}
