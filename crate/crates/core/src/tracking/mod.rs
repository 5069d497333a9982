//! Adjacent-frame association of detections by ego-compensated
//! pseudo-centres, and chaining of the matches into short tracks.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EgoMotion, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub max_distance_m: f64,
    /// Largest accepted ratio between the point counts of a matched pair.
    pub count_ratio_max: f64,
    /// Frames a track may span beyond its first one.
    pub horizon: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            max_distance_m: 2.0,
            count_ratio_max: 2.0,
            horizon: 5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_distance_m > 0.0 && self.count_ratio_max >= 1.0 && self.horizon >= 1) {
            return Err(Error::invalid(format!("invalid tracker config {self:?}")));
        }
        Ok(())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-axis median of a cloud.
pub fn pseudo_centre(points: &[Vec3]) -> Result<Vec3> {
    if points.is_empty() {
        return Err(Error::invalid("pseudo-centre of an empty cloud"));
    }
    let mut axis = vec![0.0; points.len()];
    let mut out = Vec3::zeros();
    for k in 0..3 {
        for (a, p) in axis.iter_mut().zip(points) {
            *a = p[k];
        }
        out[k] = median(&mut axis);
    }
    Ok(out)
}

/// What the tracker needs to know about one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub instance_id: u64,
    pub centre: Vec3,
    pub point_count: usize,
}

impl Detection {
    pub fn from_points(instance_id: u64, points: &[Vec3]) -> Result<Self> {
        Ok(Detection {
            instance_id,
            centre: pseudo_centre(points)?,
            point_count: points.len(),
        })
    }
}

/// Matches detections of frame `i` with those of frame `j = i + 1`.
/// `ego` maps frame-`j` camera coordinates into frame `i`. Returns index
/// pairs `(a, b)` sorted by `a`.
///
/// A pair is a candidate iff each detection is the other's nearest (ties
/// broken by lower index); candidates are then gated on distance and
/// point-count ratio.
pub fn associate(
    frame_i: &[Detection],
    frame_j: &[Detection],
    ego: &EgoMotion,
    cfg: &TrackerConfig,
) -> Vec<(usize, usize)> {
    let moved: Vec<Vec3> = frame_j.iter().map(|d| ego.apply(&d.centre)).collect();
    let mut pairs = Vec::with_capacity(frame_i.len() * frame_j.len());
    for (a, da) in frame_i.iter().enumerate() {
        for (b, cb) in moved.iter().enumerate() {
            pairs.push(((da.centre - cb).norm(), a, b));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    // the first pair in which a detection appears holds its nearest partner
    let mut seen_i = vec![false; frame_i.len()];
    let mut seen_j = vec![false; frame_j.len()];
    let mut out = Vec::new();
    for (d, a, b) in pairs {
        if !seen_i[a] && !seen_j[b] {
            let (na, nb) = (frame_i[a].point_count, frame_j[b].point_count);
            let ratio = na.max(nb) as f64 / na.min(nb).max(1) as f64;
            if d < cfg.max_distance_m && ratio <= cfg.count_ratio_max && na.min(nb) > 0 {
                out.push((a, b));
            }
        }
        seen_i[a] = true;
        seen_j[b] = true;
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    /// `(frame_id, instance_id)` in frame order.
    pub members: Vec<(u64, u64)>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingFrame {
    pub frame_id: u64,
    pub detections: Vec<Detection>,
}

/// Chains adjacent-frame matches of one sequence into tracks of at most
/// `horizon + 1` frames. `ego[k]` maps frame `k + 1` into frame `k`.
/// Frames whose ids are not consecutive are never linked. Only tracks with
/// at least two members are returned; their ids start at `first_track_id`.
pub fn build_tracks(
    frames: &[TrackingFrame],
    ego: &[EgoMotion],
    cfg: &TrackerConfig,
    first_track_id: u64,
) -> Result<Vec<Track>> {
    cfg.validate()?;
    if frames.len() > 1 && ego.len() != frames.len() - 1 {
        return Err(Error::invalid(format!(
            "{} ego transforms for {} frames",
            ego.len(),
            frames.len()
        )));
    }
    if frames.windows(2).any(|w| w[1].frame_id <= w[0].frame_id) {
        return Err(Error::invalid("frames are not in increasing frame-id order"));
    }
    // next[k][a] = matched index in frame k + 1
    let mut next: Vec<Vec<Option<usize>>> =
        frames.iter().map(|f| vec![None; f.detections.len()]).collect();
    let mut has_prev: Vec<Vec<bool>> =
        frames.iter().map(|f| vec![false; f.detections.len()]).collect();
    for k in 0..frames.len().saturating_sub(1) {
        if frames[k + 1].frame_id != frames[k].frame_id + 1 {
            continue;
        }
        for (a, b) in associate(&frames[k].detections, &frames[k + 1].detections, &ego[k], cfg) {
            next[k][a] = Some(b);
            has_prev[k + 1][b] = true;
        }
    }

    let max_len = cfg.horizon + 1;
    let mut tracks = Vec::new();
    let mut id = first_track_id;
    for k in 0..frames.len() {
        for start in 0..frames[k].detections.len() {
            if has_prev[k][start] {
                continue;
            }
            let mut chain = vec![(k, start)];
            let (mut fk, mut d) = (k, start);
            while let Some(nd) = next[fk][d] {
                fk += 1;
                d = nd;
                chain.push((fk, d));
            }
            for chunk in chain.chunks(max_len) {
                if chunk.len() < 2 {
                    continue;
                }
                tracks.push(Track {
                    track_id: id,
                    members: chunk
                        .iter()
                        .map(|&(f, d)| (frames[f].frame_id, frames[f].detections[d].instance_id))
                        .collect(),
                });
                id += 1;
            }
        }
    }
    Ok(tracks)
}

pub fn write_tracks<W: Write>(mut out: W, tracks: &[Track]) -> Result<()> {
    for t in tracks {
        let line = serde_json::to_string(t).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<tracks>", e))?;
    }
    Ok(())
}

pub fn read_tracks<R: BufRead>(input: R, path: &Path) -> Result<Vec<Track>> {
    let mut tracks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Track = serde_json::from_str(&line)
            .map_err(|e| Error::format_at_line(path, i + 1, e.to_string()))?;
        if t.members.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
            return Err(Error::format_at_line(path, i + 1, "track frames are not consecutive"));
        }
        tracks.push(t);
    }
    Ok(tracks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(id: u64, x: f64, z: f64, n: usize) -> Detection {
        Detection {
            instance_id: id,
            centre: Vec3::new(x, 0.5, z),
            point_count: n,
        }
    }

    #[test]
    fn median_examples() {
        let p = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(10.0, 0.0, 0.0)];
        assert_eq!(pseudo_centre(&p).unwrap(), Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(pseudo_centre(&p[..2]).unwrap(), Vec3::new(1.0, 0.0, 0.0));
        assert!(pseudo_centre(&[]).is_err());
    }

    #[test]
    fn gates() {
        let cfg = TrackerConfig::default();
        let id = EgoMotion::identity();
        assert_eq!(associate(&[det(0, 0.0, 10.0, 100)], &[det(1, 0.0, 10.0, 100)], &id, &cfg), vec![(0, 0)]);
        assert!(associate(&[det(0, 0.0, 10.0, 100)], &[det(1, 2.5, 10.0, 100)], &id, &cfg).is_empty());
        assert!(associate(&[det(0, 0.0, 10.0, 100)], &[det(1, 0.0, 10.0, 201)], &id, &cfg).is_empty());
        assert_eq!(associate(&[det(0, 0.0, 10.0, 100)], &[det(1, 0.0, 10.0, 200)], &id, &cfg).len(), 1);
    }

    #[test]
    fn non_consecutive_frames_are_not_linked() {
        let frames = vec![
            TrackingFrame { frame_id: 3, detections: vec![det(0, 0.0, 10.0, 50)] },
            TrackingFrame { frame_id: 5, detections: vec![det(1, 0.0, 10.0, 50)] },
        ];
        let t = build_tracks(&frames, &[EgoMotion::identity()], &TrackerConfig::default(), 0).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn long_chain_is_split() {
        let frames: Vec<_> = (0..8)
            .map(|k| TrackingFrame { frame_id: k, detections: vec![det(k, 0.0, 10.0, 50)] })
            .collect();
        let ego = vec![EgoMotion::identity(); 7];
        let t = build_tracks(&frames, &ego, &TrackerConfig::default(), 10).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].len(), 6);
        assert_eq!(t[1].len(), 2);
        assert_eq!(t[1].track_id, 11);
    }

    #[test]
    fn jsonl_round_trip() {
        let tracks = vec![Track { track_id: 2, members: vec![(4, 9), (5, 11)] }];
        let mut buf = Vec::new();
        write_tracks(&mut buf, &tracks).unwrap();
        assert_eq!(read_tracks(&buf[..], Path::new("t")).unwrap(), tracks);
    }
}
