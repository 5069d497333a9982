use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use autolabel3d::eval::{bev_svg, evaluate, EvalFrame, GroundTruth};
use autolabel3d::fit::fit_direct as fit_instance;
use autolabel3d::geometry::{
    filter_points_by_mask, posed_box, OrientedBox3D, PointCloud, TemplateMesh, Vec3,
};
use autolabel3d::kitti_io::{
    read_calib, read_ego, read_labels, read_masks, read_velodyne, velo_to_cam, write_labels,
    KittiLabel,
};
use autolabel3d::losses::YawBins;
use autolabel3d::model::{
    decode_pose, forward, load_checkpoint, save_checkpoint, train as train_model, Observation,
    TrainState, TrainingTrack,
};
use autolabel3d::synth::{
    make_dataset, read_dataset, tracks_within_sequences, write_dataset, SynthDataset,
};
use autolabel3d::tracking::{
    build_tracks, read_tracks, write_tracks, Detection, Track, TrackingFrame,
};

use crate::config::{write_resolved, RunConfig};

const CHECKPOINT_FILE: &str = "checkpoint.bin";
const LOSS_LOG_FILE: &str = "loss_log.csv";

fn prepare_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_resolved(cfg, dir)
}

fn label_path(dir: &Path, frame_id: u64) -> PathBuf {
    dir.join(format!("{frame_id:06}.txt"))
}

fn frame_id_of(path: &Path) -> Result<u64> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .with_context(|| format!("{}: file name is not a frame number", path.display()))
}

/// Files in `dir` with extension `ext`, keyed by the numeric file stem.
fn numbered_files(dir: &Path, ext: &str) -> Result<BTreeMap<u64, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.insert(frame_id_of(&path)?, path);
        }
    }
    Ok(out)
}

fn is_dataset(dir: &Path) -> bool {
    dir.join("scenes.jsonl").is_file()
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dataset = make_dataset(&cfg.synth)?;
    prepare_dir(out, cfg)?;
    write_dataset(out, &dataset)?;
    eprintln!(
        "wrote {} instances in {} frames to {}",
        dataset.instances.len(),
        dataset.camera_poses.len(),
        out.display()
    );
    Ok(())
}

/// Resolves a track file's `(frame_id, instance_id)` members against the
/// training observations.
fn tracks_to_training(
    tracks: &[Track],
    observations: &[Observation],
    dataset: &SynthDataset,
) -> Result<Vec<TrainingTrack>> {
    let index: HashMap<(u64, u64), usize> = observations
        .iter()
        .enumerate()
        .map(|(k, o)| ((o.frame_id, o.instance_id), k))
        .collect();
    tracks
        .iter()
        .map(|t| {
            let members = t
                .members
                .iter()
                .map(|m| {
                    index.get(m).copied().with_context(|| {
                        format!(
                            "track {}: frame {} instance {} is not a training instance",
                            t.track_id, m.0, m.1
                        )
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let camera_poses = t
                .members
                .iter()
                .map(|m| dataset.camera_poses[m.0 as usize])
                .collect();
            Ok(TrainingTrack {
                members,
                camera_poses,
            })
        })
        .collect()
}

pub fn train(
    cfg: &RunConfig,
    dataset_dir: &Path,
    out: &Path,
    resume: Option<&Path>,
    tracks_file: Option<&Path>,
) -> Result<()> {
    let dataset = read_dataset(dataset_dir)?;
    let mesh = dataset.config.template()?;
    let (observations, tracks) = match tracks_file {
        None => dataset.training_view(&cfg.tracker)?,
        Some(path) => {
            let (observations, _) = dataset.training_view(&cfg.tracker)?;
            let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            let tracks = read_tracks(BufReader::new(file), path)?;
            // tracks of held-out sequences are expected in a whole-dataset file
            let training_ids: HashSet<(u64, u64)> =
                observations.iter().map(|o| (o.frame_id, o.instance_id)).collect();
            let tracks: Vec<Track> = tracks
                .into_iter()
                .filter(|t| t.members.iter().any(|m| training_ids.contains(m)))
                .collect();
            let training = tracks_to_training(&tracks, &observations, &dataset)?;
            (observations, training)
        }
    };
    let state: Option<TrainState> = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            eprintln!("resuming after epoch {}", ck.state.epochs_completed);
            Some(ck.state)
        }
        None => None,
    };
    prepare_dir(out, cfg)?;
    let log_path = out.join(LOSS_LOG_FILE);
    let append = resume.is_some() && log_path.is_file();
    let mut log = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&log_path)
            .with_context(|| format!("cannot write {}", log_path.display()))?,
    );
    if !append {
        writeln!(log, "epoch,alignment,yaw_ce,consistency,lr")?;
    }
    let checkpoint = out.join(CHECKPOINT_FILE);
    eprintln!(
        "training on {} instances, {} tracks",
        observations.len(),
        tracks.len()
    );
    let start = Instant::now();
    train_model(&observations, &tracks, &mesh, &cfg.train, state, |rec, state| {
        let b = &rec.breakdown;
        writeln!(
            log,
            "{},{},{},{},{}",
            rec.epoch,
            b.alignment,
            b.yaw_ce,
            b.consistency(),
            rec.learning_rate
        )
        .and_then(|_| log.flush())
        .map_err(|e| autolabel3d::Error::io(&log_path, e))?;
        save_checkpoint(&checkpoint, &cfg.train, state)?;
        eprintln!(
            "epoch {} total {:.4} ({:.0} s)",
            rec.epoch,
            b.total,
            start.elapsed().as_secs_f64()
        );
        Ok(())
    })?;
    Ok(())
}

fn write_frame_labels(dir: &Path, frames: &BTreeMap<u64, Vec<KittiLabel>>) -> Result<()> {
    for (frame, labels) in frames {
        write_labels(&label_path(dir, *frame), labels)?;
    }
    Ok(())
}

/// Every frame of the selected split, so frames without instances still
/// get an (empty) label file.
fn split_frames(cfg: &RunConfig, dataset: &SynthDataset) -> BTreeMap<u64, Vec<KittiLabel>> {
    dataset
        .instances
        .iter()
        .filter(|i| cfg.predict.split.admits(i.split))
        .map(|i| (i.frame_id, Vec::new()))
        .collect()
}

pub fn fit_direct(cfg: &RunConfig, dataset_dir: &Path, out: &Path) -> Result<()> {
    let dataset = read_dataset(dataset_dir)?;
    let mesh = dataset.config.template()?;
    let bins = YawBins::new(cfg.train.n_bins)?;
    let mut frames = split_frames(cfg, &dataset);
    let mut unconverged = 0;
    for inst in dataset.instances.iter().filter(|i| cfg.predict.split.admits(i.split)) {
        if inst.points.len() < cfg.predict.min_points.max(1) {
            continue;
        }
        let fit = fit_instance(&inst.points, &mesh, &bins, cfg.fit.max_iterations)?;
        unconverged += usize::from(!fit.converged);
        let b = posed_box(&fit.pose, &mesh).with_score(1.0);
        frames
            .entry(inst.frame_id)
            .or_default()
            .push(KittiLabel::from_box(&b, None, Some(1.0)));
    }
    prepare_dir(out, cfg)?;
    write_frame_labels(out, &frames)?;
    eprintln!(
        "fitted {} frames; {unconverged} instances hit the iteration cap",
        frames.len()
    );
    Ok(())
}

fn predict_box(
    params: &autolabel3d::model::ModelParams,
    mesh: &TemplateMesh,
    bins: &YawBins,
    points: &[Vec3],
) -> Result<(OrientedBox3D, f64)> {
    let pred = forward(params, points)?;
    let pose = decode_pose(&pred, bins);
    Ok((posed_box(&pose, mesh), pred.yaw_confidence()))
}

struct Throughput {
    instances: usize,
    seconds: f64,
}

impl Throughput {
    fn report(&self) {
        let rate = if self.seconds > 0.0 {
            self.instances as f64 / self.seconds
        } else {
            f64::INFINITY
        };
        eprintln!(
            "predicted {} instances in {:.3} s ({rate:.1} instances/s)",
            self.instances, self.seconds
        );
    }
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, input: &Path, out: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let bins = YawBins::new(ck.config.n_bins)?;
    let mut timer = Throughput {
        instances: 0,
        seconds: 0.0,
    };
    let frames = if is_dataset(input) {
        let dataset = read_dataset(input)?;
        let mesh = dataset.config.template()?;
        let mut frames = split_frames(cfg, &dataset);
        for inst in dataset.instances.iter().filter(|i| cfg.predict.split.admits(i.split)) {
            if inst.points.len() < cfg.predict.min_points.max(1) {
                continue;
            }
            let t = Instant::now();
            let (b, score) = predict_box(&ck.state.params, &mesh, &bins, &inst.points)?;
            timer.seconds += t.elapsed().as_secs_f64();
            timer.instances += 1;
            frames
                .entry(inst.frame_id)
                .or_default()
                .push(KittiLabel::from_box(&b.with_score(score), None, Some(score)));
        }
        frames
    } else {
        let mesh = cfg.synth.template()?;
        let mut frames = BTreeMap::new();
        for frame in kitti_frames(input)? {
            let mut labels = Vec::new();
            for det in &frame.detections {
                if det.points.len() < cfg.predict.min_points.max(1) {
                    continue;
                }
                let t = Instant::now();
                let (b, _) = predict_box(&ck.state.params, &mesh, &bins, &det.points)?;
                timer.seconds += t.elapsed().as_secs_f64();
                timer.instances += 1;
                let b = b.with_score(det.score);
                labels.push(KittiLabel::from_box(&b, Some(&frame.camera), Some(det.score)));
            }
            frames.insert(frame.frame_id, labels);
        }
        frames
    };
    prepare_dir(out, cfg)?;
    write_frame_labels(out, &frames)?;
    timer.report();
    Ok(())
}

struct KittiDetection {
    instance_id: u64,
    score: f64,
    points: Vec<Vec3>,
}

struct KittiFrame {
    frame_id: u64,
    camera: autolabel3d::geometry::CameraCalibration,
    detections: Vec<KittiDetection>,
}

/// Reads a KITTI-layout directory: `velodyne/NNNNNN.bin`,
/// `calib/NNNNNN.txt`, `masks/NNNNNN.png` + `masks/NNNNNN.json`. Only
/// detections whose category is "car" (any case) are kept.
fn kitti_frames(dir: &Path) -> Result<Vec<KittiFrame>> {
    let velodyne = numbered_files(&dir.join("velodyne"), "bin")?;
    let mut frames = Vec::with_capacity(velodyne.len());
    for (frame_id, bin) in velodyne {
        let calib = read_calib(&dir.join("calib").join(format!("{frame_id:06}.txt")))?;
        let masks_dir = dir.join("masks");
        let masks = read_masks(
            &masks_dir.join(format!("{frame_id:06}.png")),
            &masks_dir.join(format!("{frame_id:06}.json")),
        )?;
        for w in &masks.warnings {
            eprintln!("warning: frame {frame_id}: {w}");
        }
        let cloud = velo_to_cam(&calib, &read_velodyne(&bin)?)?;
        let (width, height) = match masks.detections.first() {
            Some(d) => (d.mask.width(), d.mask.height()),
            None => (1, 1),
        };
        let camera = calib.camera(width, height)?;
        let mut detections = Vec::new();
        for d in masks
            .detections
            .iter()
            .filter(|d| d.meta.category.eq_ignore_ascii_case("car"))
        {
            let points: PointCloud = filter_points_by_mask(&camera, &cloud, &d.mask)?;
            detections.push(KittiDetection {
                instance_id: u64::from(d.meta.instance_id),
                score: d.meta.score,
                points: points.into_points(),
            });
        }
        frames.push(KittiFrame {
            frame_id,
            camera,
            detections,
        });
    }
    Ok(frames)
}

pub fn track(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let tracks = if is_dataset(input) {
        let dataset = read_dataset(input)?;
        let all: Vec<_> = dataset.instances.iter().collect();
        tracks_within_sequences(&all, &dataset.camera_poses, &cfg.tracker)?
    } else {
        let ego_path = input.join("ego.txt");
        let poses = read_ego(&ego_path)?;
        let mut frames = Vec::new();
        for f in kitti_frames(input)? {
            let detections = f
                .detections
                .iter()
                .filter(|d| !d.points.is_empty())
                .map(|d| Detection::from_points(d.instance_id, &d.points))
                .collect::<autolabel3d::Result<Vec<_>>>()?;
            frames.push(TrackingFrame {
                frame_id: f.frame_id,
                detections,
            });
        }
        let pose = |id: u64| {
            poses.get(id as usize).copied().with_context(|| {
                format!("{}: no camera pose for frame {id}", ego_path.display())
            })
        };
        let mut ego = Vec::new();
        for w in frames.windows(2) {
            ego.push(pose(w[0].frame_id)?.inverse().compose(&pose(w[1].frame_id)?));
        }
        build_tracks(&frames, &ego, &cfg.tracker, 0)?
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent, cfg)?;
    }
    let file = File::create(out).with_context(|| format!("cannot write {}", out.display()))?;
    let mut w = BufWriter::new(file);
    write_tracks(&mut w, &tracks)?;
    w.flush()?;
    eprintln!("wrote {} tracks", tracks.len());
    Ok(())
}

struct GroundTruthFrame {
    boxes: Vec<GroundTruth>,
    points: Vec<Vec3>,
}

/// Ground truth from a synthetic dataset directory (instances of the
/// configured split, difficulty by inlier count) or from a directory of
/// KITTI label files (cars only, KITTI difficulty).
fn load_ground_truth(cfg: &RunConfig, gt: &Path) -> Result<(BTreeMap<u64, GroundTruthFrame>, &'static str)> {
    let mut frames: BTreeMap<u64, GroundTruthFrame> = BTreeMap::new();
    if is_dataset(gt) {
        let dataset = read_dataset(gt)?;
        for inst in dataset.instances.iter().filter(|i| cfg.predict.split.admits(i.split)) {
            let f = frames.entry(inst.frame_id).or_insert_with(|| GroundTruthFrame {
                boxes: Vec::new(),
                points: Vec::new(),
            });
            f.boxes.push(GroundTruth {
                bbox: inst.gt_box,
                difficulty: inst.difficulty(),
            });
            f.points.extend_from_slice(&inst.points);
        }
        return Ok((frames, "inlier count"));
    }
    for (frame, path) in numbered_files(gt, "txt")? {
        let boxes = read_labels(&path)?
            .iter()
            .filter(|l| l.kind == "Car")
            .map(|l| {
                Ok(GroundTruth {
                    bbox: l.to_box()?,
                    difficulty: l.difficulty(),
                })
            })
            .collect::<autolabel3d::Result<Vec<_>>>()?;
        frames.insert(
            frame,
            GroundTruthFrame {
                boxes,
                points: Vec::new(),
            },
        );
    }
    Ok((frames, "kitti"))
}

fn load_predictions(dir: &Path) -> Result<BTreeMap<u64, Vec<OrientedBox3D>>> {
    numbered_files(dir, "txt")?
        .into_iter()
        .map(|(frame, path)| {
            let boxes = read_labels(&path)?
                .iter()
                .map(|l| l.to_box())
                .collect::<autolabel3d::Result<Vec<_>>>()?;
            Ok((frame, boxes))
        })
        .collect()
}

pub fn eval(cfg: &RunConfig, pred: &Path, gt: &Path, out: &Path) -> Result<()> {
    let (mut gt_frames, scheme) = load_ground_truth(cfg, gt)?;
    let mut predictions = load_predictions(pred)?;
    let ids: Vec<u64> = gt_frames
        .keys()
        .chain(predictions.keys())
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let frames: Vec<EvalFrame> = ids
        .into_iter()
        .map(|id| EvalFrame {
            frame_id: id,
            ground_truth: gt_frames.remove(&id).map(|f| f.boxes).unwrap_or_default(),
            predictions: predictions.remove(&id).unwrap_or_default(),
        })
        .collect();
    let report = evaluate(&frames, cfg.eval.iou_threshold, scheme)?;
    prepare_dir(out, cfg)?;
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(out.join("report.json"), json + "\n")?;
    fs::write(out.join("report.txt"), report.to_text())?;
    if let Some(overall) = report.bucket("overall") {
        eprintln!(
            "AP_BEV@40 {:.4}, AP_3D@40 {:.4} over {} ground truths",
            overall.bev.ap_40, overall.box_3d.ap_40, overall.n_gt
        );
    }
    Ok(())
}

pub fn export_svg(cfg: &RunConfig, pred: &Path, gt: &Path, frame: u64, out: &Path) -> Result<()> {
    let (mut gt_frames, _) = load_ground_truth(cfg, gt)?;
    let mut predictions = load_predictions(pred)?;
    let gt_frame = gt_frames.remove(&frame);
    let preds = predictions.remove(&frame);
    if gt_frame.is_none() && preds.is_none() {
        bail!("frame {frame} is in neither the predictions nor the ground truth");
    }
    let (gts, points) = match gt_frame {
        Some(f) => (f.boxes.iter().map(|g| g.bbox).collect(), f.points),
        None => (Vec::new(), Vec::new()),
    };
    let svg = bev_svg(&gts, &preds.unwrap_or_default(), &points);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent, cfg)?;
    }
    fs::write(out, svg).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(())
}
