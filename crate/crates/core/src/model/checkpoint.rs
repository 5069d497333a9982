//! Binary checkpoint: `AL3D` magic, `u32` format version, the training
//! config as length-prefixed JSON, epoch and optimizer counters, then the
//! parameters (and optionally Adam moments) as little-endian `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use super::autodiff::Matrix;
use super::{AdamState, ModelParams, TrainConfig, TrainState};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AL3D";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

/// The JSON sidecar next to a checkpoint: same stem, `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint(path: &Path, config: &TrainConfig, state: &TrainState) -> Result<()> {
    let json = serde_json::to_vec(config).map_err(|e| Error::invalid(e.to_string()))?;
    let params = state.params.flatten();
    let mut out = Vec::with_capacity(64 + json.len() + 24 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(state.epochs_completed as u64).to_le_bytes());
    out.extend_from_slice(&state.adam.step.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(1);
    for moments in [&state.adam.m, &state.adam.v] {
        for t in moments {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let pretty = serde_json::to_string_pretty(config).map_err(|e| Error::invalid(e.to_string()))?;
    let side = sidecar_path(path);
    fs::write(&side, pretty + "\n").map_err(|e| Error::io(&side, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::format_at_byte(
                self.path,
                self.at as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).unwrap_or(usize::MAX), what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn shaped_like(params: &ModelParams, flat: &[f64]) -> Vec<Matrix> {
    let mut offset = 0;
    params
        .tensors()
        .iter()
        .map(|t| {
            let n = t.data().len();
            let m = Matrix::from_vec(t.rows(), t.cols(), flat[offset..offset + n].to_vec())
                .expect("sizes come from the same layout");
            offset += n;
            m
        })
        .collect()
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        at: 0,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format_at_byte(path, 0, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format_at_byte(
            path,
            4,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let json_len = r.u32("config length")? as usize;
    let json_at = r.at;
    let config: TrainConfig = serde_json::from_slice(r.take(json_len, "config")?)
        .map_err(|e| Error::format_at_byte(path, json_at as u64, e.to_string()))?;
    let epochs_completed = r.u64("epoch count")? as usize;
    let step = r.u64("optimizer step")?;
    let n_at = r.at;
    let n = r.u64("parameter count")? as usize;
    let flat = r.f64s(n, "parameters")?;
    let params = ModelParams::from_flat(&config.model, config.n_bins, &flat)
        .map_err(|e| Error::format_at_byte(path, n_at as u64, e.to_string()))?;
    let adam = match r.take(1, "moment flag")?[0] {
        0 => AdamState::new(&params),
        1 => {
            let m = r.f64s(n, "first moments")?;
            let v = r.f64s(n, "second moments")?;
            AdamState {
                step,
                m: shaped_like(&params, &m),
                v: shaped_like(&params, &v),
            }
        }
        other => {
            return Err(Error::format_at_byte(
                path,
                (r.at - 1) as u64,
                format!("bad moment flag {other}"),
            ))
        }
    };
    if r.at != bytes.len() {
        return Err(Error::format_at_byte(path, r.at as u64, "trailing bytes"));
    }
    Ok(Checkpoint {
        config,
        state: TrainState {
            params,
            adam,
            epochs_completed,
        },
    })
}
