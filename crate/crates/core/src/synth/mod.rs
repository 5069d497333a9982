//! Synthetic LiDAR observations of a template car with known poses: exact
//! ray-cast visibility, Gaussian range noise and three outlier mechanisms.

mod io;

use std::collections::{BTreeMap, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use io::{read_dataset, write_dataset};

use crate::error::{Error, Result};
use crate::geometry::{
    builtin_car_template, posed_box, yaw_rotation, EgoMotion, OrientedBox3D, Pose4DoF,
    RigidTransform, TemplateMesh, TightBox, Vec3, DEFAULT_CAR_DIMENSIONS,
};
use crate::model::{Observation, TrainingTrack};
use crate::tracking::{build_tracks, Detection, Track, TrackerConfig, TrackingFrame};

/// Fewer visible surface points than this and the draw is rejected.
pub const MIN_VISIBLE_POINTS: usize = 5;

/// Minimum inlier counts of the easy, moderate and hard levels.
pub const DIFFICULTY_MIN_INLIERS: [usize; 3] = [200, 80, 20];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierModes {
    /// Ground returns next to the car.
    pub ground: bool,
    /// Returns from an adjacent car-sized box.
    pub neighbour: bool,
    /// Returns from behind the surface along the sensor ray.
    pub pass_through: bool,
}

impl Default for OutlierModes {
    fn default() -> Self {
        OutlierModes {
            ground: true,
            neighbour: true,
            pass_through: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_instances: usize,
    /// Lateral range of object centres in the first frame, metres.
    pub x_range: [f64; 2],
    /// Depth range of object centres over a whole sequence, metres.
    pub z_range: [f64; 2],
    /// Height of the sensor above the ground plane (camera `y` points down).
    pub ground_y: f64,
    /// Visible surface points drawn per instance, inclusive range.
    pub points_range: [usize; 2],
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub outlier_modes: OutlierModes,
    /// Frames per sequence; each sequence observes one static object.
    pub sequence_length: usize,
    /// Forward sensor motion per frame, metres.
    pub ego_step_range: [f64; 2],
    /// Largest sensor yaw change per frame, degrees.
    pub ego_yaw_deg: f64,
    /// Fraction of sequences held out from training.
    pub heldout_fraction: f64,
    /// Template car (length, width, height), metres.
    pub car_dimensions: [f64; 3],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let (l, w, h) = DEFAULT_CAR_DIMENSIONS;
        SynthConfig {
            n_instances: 2000,
            x_range: [-12.0, 12.0],
            z_range: [8.0, 35.0],
            ground_y: 1.65,
            points_range: [48, 256],
            noise_sigma: 0.02,
            outlier_fraction: 0.15,
            outlier_modes: OutlierModes::default(),
            sequence_length: 5,
            ego_step_range: [0.5, 1.5],
            ego_yaw_deg: 2.0,
            heldout_fraction: 0.1,
            car_dimensions: [l, w, h],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let ok = range_ok(self.x_range)
            && range_ok(self.z_range)
            && range_ok(self.ego_step_range)
            && self.z_range[0] > 0.0
            && self.points_range[0] >= MIN_VISIBLE_POINTS
            && self.points_range[0] <= self.points_range[1]
            && self.noise_sigma >= 0.0
            && (0.0..=1.0).contains(&self.outlier_fraction)
            && (0.0..=1.0).contains(&self.heldout_fraction)
            && self.sequence_length >= 1
            && self.ego_yaw_deg >= 0.0
            && self.car_dimensions.iter().all(|d| *d > 0.0)
            && self.ground_y > 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid synthetic config {self:?}")));
        }
        if self.z_range[0] + self.total_advance() > self.z_range[1] {
            return Err(Error::invalid(
                "depth range too small for the sensor motion over a sequence",
            ));
        }
        Ok(())
    }

    fn total_advance(&self) -> f64 {
        self.ego_step_range[1] * self.sequence_length.saturating_sub(1) as f64
    }

    pub fn template(&self) -> Result<TemplateMesh> {
        let [l, w, h] = self.car_dimensions;
        builtin_car_template(l, w, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

/// One synthetic detection with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub instance_id: u64,
    pub frame_id: u64,
    pub sequence_id: u64,
    pub track_id: u64,
    pub split: Split,
    /// Camera frame, metres.
    pub points: Vec<Vec3>,
    pub outlier_flags: Vec<bool>,
    pub gt_pose: Pose4DoF,
    pub gt_box: OrientedBox3D,
}

impl SynthInstance {
    pub fn inlier_count(&self) -> usize {
        self.outlier_flags.iter().filter(|f| !**f).count()
    }

    /// Evaluation level from the inlier count: 0 easy, 1 moderate, 2 hard,
    /// `None` below [`DIFFICULTY_MIN_INLIERS`]`[2]`.
    pub fn difficulty(&self) -> Option<usize> {
        let n = self.inlier_count();
        DIFFICULTY_MIN_INLIERS.iter().position(|&m| n >= m)
    }

    /// The ground-truth-free view used for training.
    pub fn observation(&self) -> Observation {
        Observation {
            instance_id: self.instance_id,
            frame_id: self.frame_id,
            points: self.points.clone(),
        }
    }
}

/// Points and outlier flags of one simulated scan of a posed template.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub points: Vec<Vec3>,
    pub outlier_flags: Vec<bool>,
}

/// Samples `pose`'s template surface as seen from the origin: uniform
/// surface samples are kept only if no triangle lies between them and the
/// sensor, then noise and outliers are added.
pub fn observe<R: Rng + ?Sized>(
    rng: &mut R,
    mesh: &TemplateMesh,
    pose: &Pose4DoF,
    config: &SynthConfig,
) -> Result<Scan> {
    let target = rng.random_range(config.points_range[0]..=config.points_range[1]);
    let sensor = pose.apply_inverse(&Vec3::zeros());
    let mut visible = Vec::with_capacity(target);
    let max_draws = 60 * target;
    for _ in 0..max_draws {
        if visible.len() == target {
            break;
        }
        let (p, tri) = mesh.sample_surface(rng);
        if mesh.triangle_normal(tri).dot(&(p - sensor)) >= 0.0 {
            continue;
        }
        if !mesh.segment_blocked(&sensor, &p) {
            visible.push(p);
        }
    }
    if visible.len() < MIN_VISIBLE_POINTS {
        return Err(Error::Resample(format!(
            "{} visible points after {max_draws} draws",
            visible.len()
        )));
    }

    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut points: Vec<Vec3> = visible
        .iter()
        .map(|p| {
            let mut q = pose.apply(p);
            if config.noise_sigma > 0.0 {
                q += Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
            }
            q
        })
        .collect();
    let inliers = points.len();
    let mut flags = vec![false; inliers];

    let modes: Vec<OutlierMode> = [
        (config.outlier_modes.ground, OutlierMode::Ground),
        (config.outlier_modes.neighbour, OutlierMode::Neighbour),
        (config.outlier_modes.pass_through, OutlierMode::PassThrough),
    ]
    .into_iter()
    .filter_map(|(on, m)| on.then_some(m))
    .collect();
    if !modes.is_empty() && config.outlier_fraction > 0.0 {
        let wanted = (config.outlier_fraction * inliers as f64).ceil() as usize;
        let neighbour = NeighbourBox::sample(rng, mesh);
        let ctx = OutlierContext {
            mesh,
            pose,
            sensor: &sensor,
            visible: &visible,
            ground_y: config.ground_y,
            neighbour: &neighbour,
        };
        let mut attempts = 0;
        let mut added = 0;
        while added < wanted && attempts < 200 * wanted {
            attempts += 1;
            let mode = *modes.choose(rng).expect("non-empty");
            if let Some(local) = ctx.sample(rng, mode) {
                points.push(pose.apply(&local));
                flags.push(true);
                added += 1;
            }
        }
    }
    Ok(Scan {
        points,
        outlier_flags: flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutlierMode {
    Ground,
    Neighbour,
    PassThrough,
}

/// A car-sized box beside, in front of or behind the object, in the
/// object's frame.
struct NeighbourBox {
    bounds: TightBox,
}

impl NeighbourBox {
    fn sample<R: Rng + ?Sized>(rng: &mut R, mesh: &TemplateMesh) -> Self {
        let b = mesh.tight_box();
        let ext = b.extents();
        let gap = rng.random_range(0.3..1.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let offset = if rng.random_bool(0.5) {
            Vec3::new(sign * (ext.x + gap), 0.0, rng.random_range(-0.5..0.5) * ext.z)
        } else {
            Vec3::new(rng.random_range(-0.3..0.3) * ext.x, 0.0, sign * (ext.z + gap))
        };
        NeighbourBox {
            bounds: TightBox {
                min: [b.min[0] + offset.x, b.min[1], b.min[2] + offset.z],
                max: [b.max[0] + offset.x, b.max[1], b.max[2] + offset.z],
            },
        }
    }
}

struct OutlierContext<'a> {
    mesh: &'a TemplateMesh,
    pose: &'a Pose4DoF,
    sensor: &'a Vec3,
    visible: &'a [Vec3],
    ground_y: f64,
    neighbour: &'a NeighbourBox,
}

impl OutlierContext<'_> {
    /// One outlier in the object frame, or `None` if the draw was rejected.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, mode: OutlierMode) -> Option<Vec3> {
        let b = self.mesh.tight_box();
        let p = match mode {
            OutlierMode::Ground => {
                let margin = 1.0;
                let x = rng.random_range(b.min[0] - margin..b.max[0] + margin);
                let z = rng.random_range(b.min[2] - margin..b.max[2] + margin);
                // the ground plane y is the same in both frames: yaw keeps y
                let y = self.ground_y - self.pose.translation().y;
                let p = Vec3::new(x, y, z);
                let outside = (x - x.clamp(b.min[0], b.max[0]))
                    .hypot(z - z.clamp(b.min[2], b.max[2]));
                if outside < 0.15 {
                    return None;
                }
                p
            }
            OutlierMode::Neighbour => {
                let n = &self.neighbour.bounds;
                let p = Vec3::new(
                    rng.random_range(n.min[0]..n.max[0]),
                    rng.random_range(n.min[1]..n.max[1]),
                    rng.random_range(n.min[2]..n.max[2]),
                );
                // project onto the face nearest the sensor's side
                let mut q = p;
                let axis = if (self.sensor.x - p.x).abs() * rng.random_range(0.0..1.0)
                    > (self.sensor.z - p.z).abs() * rng.random_range(0.0..1.0)
                {
                    0
                } else {
                    2
                };
                q[axis] = if self.sensor[axis] < p[axis] { n.min[axis] } else { n.max[axis] };
                if b.sq_distance(&q) > 1.5 * 1.5 {
                    return None;
                }
                q
            }
            OutlierMode::PassThrough => {
                let s = self.visible.choose(rng)?;
                let dir = (s - self.sensor).normalize();
                s + dir * rng.random_range(0.3..2.0)
            }
        };
        if self.mesh.closest_point(&p).sq_distance < 0.1 * 0.1 {
            return None;
        }
        if mode != OutlierMode::PassThrough && self.mesh.segment_blocked(self.sensor, &p) {
            return None;
        }
        Some(p)
    }
}

/// Random pose in the configured ranges, resting on the ground plane.
fn sample_pose<R: Rng + ?Sized>(
    rng: &mut R,
    mesh: &TemplateMesh,
    config: &SynthConfig,
    z_range: [f64; 2],
) -> Pose4DoF {
    let half_height = mesh.tight_box().extents().y / 2.0;
    loop {
        let z = rng.random_range(z_range[0]..=z_range[1]);
        let x = rng.random_range(config.x_range[0]..=config.x_range[1]);
        if x.abs() <= 0.8 * z {
            let yaw = rng.random_range(0.0..std::f64::consts::TAU);
            return Pose4DoF::new(yaw, Vec3::new(x, config.ground_y - half_height, z));
        }
    }
}

/// One instance at a random pose. Fails with [`Error::Resample`] when too
/// little of the object is visible; the caller should draw again.
pub fn sample_instance<R: Rng + ?Sized>(
    rng: &mut R,
    mesh: &TemplateMesh,
    config: &SynthConfig,
) -> Result<(Pose4DoF, Scan)> {
    config.validate()?;
    let pose = sample_pose(rng, mesh, config, config.z_range);
    let scan = observe(rng, mesh, &pose, config)?;
    Ok((pose, scan))
}

/// A static object seen from a moving sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    /// Camera pose of every frame in the sequence's world frame (the first
    /// camera); frame `i` sees frame `j` through `C_i⁻¹ C_j`.
    pub camera_poses: Vec<EgoMotion>,
    /// Object pose in each camera frame.
    pub gt_poses: Vec<Pose4DoF>,
    pub scans: Vec<Scan>,
}

/// Relative transform mapping frame-`j` camera coordinates into frame `i`.
pub fn relative_ego(camera_poses: &[EgoMotion], i: usize, j: usize) -> EgoMotion {
    camera_poses[i].inverse().compose(&camera_poses[j])
}

/// `frames` views of one static object. Fails with [`Error::Resample`] if
/// any view shows too little of it.
pub fn sample_sequence<R: Rng + ?Sized>(
    rng: &mut R,
    mesh: &TemplateMesh,
    config: &SynthConfig,
    frames: usize,
) -> Result<SynthSequence> {
    config.validate()?;
    if frames == 0 {
        return Err(Error::invalid("a sequence needs at least one frame"));
    }
    let mut camera_poses = vec![EgoMotion::identity()];
    for _ in 1..frames {
        let step = rng.random_range(config.ego_step_range[0]..=config.ego_step_range[1]);
        let dyaw = rng.random_range(-1.0..=1.0) * config.ego_yaw_deg.to_radians();
        let motion = RigidTransform::new(yaw_rotation(dyaw), Vec3::new(0.0, 0.0, step))?;
        let last = *camera_poses.last().expect("non-empty");
        camera_poses.push(last.compose(&motion));
    }
    let advance = config.total_advance();
    let world = sample_pose(
        rng,
        mesh,
        config,
        [config.z_range[0] + advance, config.z_range[1]],
    );
    let gt_poses: Vec<Pose4DoF> = camera_poses
        .iter()
        .map(|c| c.inverse().compose(&world.to_rigid()).to_pose())
        .collect();
    for p in &gt_poses {
        let t = p.translation();
        if t.z <= 0.0 || t.x.abs() > 0.8 * t.z {
            return Err(Error::Resample("object leaves the field of view".into()));
        }
    }
    let scans = gt_poses
        .iter()
        .map(|p| observe(rng, mesh, p, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthSequence {
        camera_poses,
        gt_poses,
        scans,
    })
}

/// A generated dataset: instances in frame order and the camera pose of
/// every frame in its sequence's world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub instances: Vec<SynthInstance>,
    /// Indexed by frame id.
    pub camera_poses: Vec<EgoMotion>,
}

impl SynthDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SynthInstance> {
        self.instances.iter().filter(move |i| i.split == split)
    }

    /// Observations of the training split, without ground truth, and the
    /// tracks the tracker finds among them within each sequence.
    pub fn training_view(&self, tracker: &TrackerConfig) -> Result<(Vec<Observation>, Vec<TrainingTrack>)> {
        let train: Vec<&SynthInstance> = self.split(Split::Train).collect();
        let observations: Vec<Observation> = train.iter().map(|i| i.observation()).collect();
        let tracks = tracks_within_sequences(&train, &self.camera_poses, tracker)?;
        let index: HashMap<(u64, u64), usize> = train
            .iter()
            .enumerate()
            .map(|(k, i)| ((i.frame_id, i.instance_id), k))
            .collect();
        let training = tracks
            .iter()
            .map(|t| TrainingTrack {
                members: t.members.iter().map(|m| index[m]).collect(),
                camera_poses: t.members.iter().map(|m| self.camera_poses[m.0 as usize]).collect(),
            })
            .collect();
        Ok((observations, training))
    }
}

/// Runs the tracker over each sequence of `instances` (grouped by
/// sequence id, frames in id order). `camera_poses` is indexed by frame id.
pub fn tracks_within_sequences(
    instances: &[&SynthInstance],
    camera_poses: &[EgoMotion],
    tracker: &TrackerConfig,
) -> Result<Vec<Track>> {
    let mut by_sequence: BTreeMap<u64, BTreeMap<u64, Vec<Detection>>> = BTreeMap::new();
    for inst in instances {
        by_sequence
            .entry(inst.sequence_id)
            .or_default()
            .entry(inst.frame_id)
            .or_default()
            .push(Detection::from_points(inst.instance_id, &inst.points)?);
    }
    let mut tracks = Vec::new();
    for frames in by_sequence.into_values() {
        let frames: Vec<TrackingFrame> = frames
            .into_iter()
            .map(|(frame_id, detections)| TrackingFrame { frame_id, detections })
            .collect();
        let ego: Vec<EgoMotion> = frames
            .windows(2)
            .map(|w| {
                camera_poses[w[0].frame_id as usize]
                    .inverse()
                    .compose(&camera_poses[w[1].frame_id as usize])
            })
            .collect();
        let first = tracks.len() as u64;
        tracks.extend(build_tracks(&frames, &ego, tracker, first)?);
    }
    Ok(tracks)
}

fn round_f32(p: Vec3) -> Vec3 {
    Vec3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64)
}

/// Draws `config.n_instances` instances as sequences of
/// `config.sequence_length` frames (the last one shorter if needed). Every
/// sequence uses its own random stream, so results do not depend on
/// generation order. Whole sequences are held out.
pub fn make_dataset(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mesh = config.template()?;
    let k = config.sequence_length;
    let n_seq = config.n_instances.div_ceil(k);

    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n_seq).collect();
    order.shuffle(&mut split_rng);
    let n_heldout = (config.heldout_fraction * n_seq as f64).round() as usize;
    let mut heldout = vec![false; n_seq];
    for &s in &order[..n_heldout.min(n_seq)] {
        heldout[s] = true;
    }

    let mut instances = Vec::with_capacity(config.n_instances);
    let mut camera_poses = Vec::with_capacity(config.n_instances);
    for s in 0..n_seq {
        let frames = k.min(config.n_instances - s * k);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s as u64 + 1);
        let mut attempt = 0;
        let seq = loop {
            match sample_sequence(&mut rng, &mesh, config, frames) {
                Ok(seq) => break seq,
                Err(Error::Resample(msg)) => {
                    attempt += 1;
                    if attempt >= 1000 {
                        return Err(Error::invalid(format!(
                            "sequence {s}: no usable draw after {attempt} attempts ({msg})"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        for (f, (scan, pose)) in seq.scans.into_iter().zip(&seq.gt_poses).enumerate() {
            let id = instances.len() as u64;
            instances.push(SynthInstance {
                instance_id: id,
                frame_id: id,
                sequence_id: s as u64,
                track_id: s as u64,
                split: if heldout[s] { Split::Heldout } else { Split::Train },
                points: scan.points.into_iter().map(round_f32).collect(),
                outlier_flags: scan.outlier_flags,
                gt_pose: *pose,
                gt_box: posed_box(pose, &mesh),
            });
            camera_poses.push(seq.camera_poses[f]);
        }
    }
    Ok(SynthDataset {
        config: config.clone(),
        instances,
        camera_poses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            n_instances: n,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn exact_count_and_split_by_sequence() {
        let d = make_dataset(&small(23)).unwrap();
        assert_eq!(d.instances.len(), 23);
        assert_eq!(d.camera_poses.len(), 23);
        for w in d.instances.windows(2) {
            if w[0].sequence_id == w[1].sequence_id {
                assert_eq!(w[0].split, w[1].split);
            }
        }
        assert_eq!(d.instances.last().unwrap().sequence_id, 4);
    }

    #[test]
    fn empty_dataset() {
        let d = make_dataset(&small(0)).unwrap();
        assert!(d.instances.is_empty());
    }

    #[test]
    fn noiseless_inliers_lie_on_surface() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            ..small(1)
        };
        let mesh = cfg.template().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (pose, scan) = sample_instance(&mut rng, &mesh, &cfg).unwrap();
        assert!(scan.outlier_flags.iter().all(|f| !f));
        let d = crate::losses::half_chamfer(&pose, &mesh, &scan.points).unwrap();
        assert!(d < 1e-20, "{d}");
    }

    #[test]
    fn outlier_count_is_ceiling() {
        let cfg = small(1);
        let mesh = cfg.template().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, scan) = sample_instance(&mut rng, &mesh, &cfg).unwrap();
        let inl = scan.outlier_flags.iter().filter(|f| !**f).count();
        let out = scan.points.len() - inl;
        assert_eq!(out, (0.15 * inl as f64).ceil() as usize);
    }

    #[test]
    fn training_view_hides_heldout() {
        let d = make_dataset(&small(40)).unwrap();
        let (obs, tracks) = d.training_view(&TrackerConfig::default()).unwrap();
        assert!(!tracks.is_empty());
        assert_eq!(obs.len(), d.split(Split::Train).count());
        assert!(tracks.iter().all(|t| t.members.len() == t.camera_poses.len()));
    }
}
