//! On-disk dataset layout: `config.json`, `scenes.jsonl`, `points.bin`
//! (little-endian `f32` xyz) and `ego.txt` (one 3×4 row-major camera pose
//! per frame).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Split, SynthConfig, SynthDataset, SynthInstance};
use crate::error::{Error, Result};
use crate::geometry::{OrientedBox3D, Pose4DoF, Vec3};
use crate::kitti_io::{read_ego, write_ego};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    instance_id: u64,
    frame_id: u64,
    sequence_id: u64,
    track_id: u64,
    split: Split,
    gt_pose: Pose4DoF,
    gt_box: OrientedBox3D,
    /// Index of the first point in `points.bin`.
    point_offset: u64,
    point_count: u64,
    outlier_indices: Vec<u32>,
}

pub fn write_dataset(dir: &Path, dataset: &SynthDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join("config.json");
    let config = serde_json::to_string_pretty(&dataset.config)
        .map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(&config_path, config + "\n").map_err(|e| Error::io(&config_path, e))?;

    let scenes_path = dir.join("scenes.jsonl");
    let points_path = dir.join("points.bin");
    let file = fs::File::create(&scenes_path).map_err(|e| Error::io(&scenes_path, e))?;
    let mut scenes = BufWriter::new(file);
    let mut points = Vec::new();
    let mut offset = 0u64;
    for inst in &dataset.instances {
        let record = SceneRecord {
            instance_id: inst.instance_id,
            frame_id: inst.frame_id,
            sequence_id: inst.sequence_id,
            track_id: inst.track_id,
            split: inst.split,
            gt_pose: inst.gt_pose,
            gt_box: inst.gt_box,
            point_offset: offset,
            point_count: inst.points.len() as u64,
            outlier_indices: inst
                .outlier_flags
                .iter()
                .enumerate()
                .filter(|(_, f)| **f)
                .map(|(i, _)| i as u32)
                .collect(),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(scenes, "{line}").map_err(|e| Error::io(&scenes_path, e))?;
        for p in &inst.points {
            for v in [p.x, p.y, p.z] {
                points.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        offset += inst.points.len() as u64;
    }
    scenes.flush().map_err(|e| Error::io(&scenes_path, e))?;
    fs::write(&points_path, points).map_err(|e| Error::io(&points_path, e))?;
    write_ego(&dir.join("ego.txt"), &dataset.camera_poses)
}

pub fn read_dataset(dir: &Path) -> Result<SynthDataset> {
    let config_path = dir.join("config.json");
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config: SynthConfig =
        serde_json::from_str(&text).map_err(|e| Error::format(&config_path, e.to_string()))?;

    let points_path = dir.join("points.bin");
    let raw = fs::read(&points_path).map_err(|e| Error::io(&points_path, e))?;
    if raw.len() % 12 != 0 {
        return Err(Error::format_at_byte(
            &points_path,
            (raw.len() - raw.len() % 12) as u64,
            "file size is not a multiple of 12 bytes",
        ));
    }
    let all: Vec<Vec3> = raw
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            Vec3::new(f(0), f(1), f(2))
        })
        .collect();

    let scenes_path = dir.join("scenes.jsonl");
    let file = fs::File::open(&scenes_path).map_err(|e| Error::io(&scenes_path, e))?;
    let mut instances = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&scenes_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::format_at_line(&scenes_path, i + 1, msg);
        let r: SceneRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let start = r.point_offset as usize;
        let end = start
            .checked_add(r.point_count as usize)
            .filter(|&e| e <= all.len())
            .ok_or_else(|| at(format!("points {start}+{} out of range", r.point_count)))?;
        let mut flags = vec![false; end - start];
        for &o in &r.outlier_indices {
            *flags
                .get_mut(o as usize)
                .ok_or_else(|| at(format!("outlier index {o} out of range")))? = true;
        }
        instances.push(SynthInstance {
            instance_id: r.instance_id,
            frame_id: r.frame_id,
            sequence_id: r.sequence_id,
            track_id: r.track_id,
            split: r.split,
            points: all[start..end].to_vec(),
            outlier_flags: flags,
            gt_pose: r.gt_pose,
            gt_box: r.gt_box,
        });
    }
    let camera_poses = read_ego(&dir.join("ego.txt"))?;
    if let Some(bad) = instances.iter().find(|i| i.frame_id as usize >= camera_poses.len()) {
        return Err(Error::format(
            dir.join("ego.txt"),
            format!("no camera pose for frame {}", bad.frame_id),
        ));
    }
    Ok(SynthDataset {
        config,
        instances,
        camera_poses,
    })
}
