//! Instance masks: a 16-bit grayscale PNG where pixel value `k > 0` marks
//! instance `k`, plus a JSON sidecar listing `{instance_id, score,
//! category}` per instance.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Mask2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskMeta {
    pub instance_id: u16,
    pub score: f64,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskDetection {
    pub meta: MaskMeta,
    pub mask: Mask2D,
}

/// Masks in sidecar order, and one warning per listed instance that had
/// no pixels in the map.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadMasks {
    pub detections: Vec<MaskDetection>,
    pub warnings: Vec<String>,
}

fn read_instance_map(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::format(
            path,
            format!(
                "expected a 16-bit grayscale instance map, found {:?} at {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let out = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (out.width, out.height);
    let mut ids = Vec::with_capacity((w * h) as usize);
    for row in buf.chunks(out.line_size).take(h as usize) {
        ids.extend(row[..2 * w as usize].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])));
    }
    Ok((w, h, ids))
}

pub fn read_masks(png_path: &Path, json_path: &Path) -> Result<ReadMasks> {
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let metas: Vec<MaskMeta> =
        serde_json::from_str(&text).map_err(|e| Error::format(json_path, e.to_string()))?;
    if metas.is_empty() {
        return Ok(ReadMasks {
            detections: Vec::new(),
            warnings: Vec::new(),
        });
    }
    let (w, h, ids) = read_instance_map(png_path)?;
    let mut detections = Vec::new();
    let mut warnings = Vec::new();
    for meta in metas {
        if meta.instance_id == 0 {
            return Err(Error::format(json_path, "instance id 0 is reserved for background"));
        }
        let bitmap: Vec<bool> = ids.iter().map(|&v| v == meta.instance_id).collect();
        if !bitmap.iter().any(|b| *b) {
            warnings.push(format!(
                "{}: instance {} has no pixels in {}; skipped",
                json_path.display(),
                meta.instance_id,
                png_path.display()
            ));
            continue;
        }
        let mask = Mask2D::new(w, h, bitmap, meta.score)
            .map_err(|e| Error::format(json_path, e.to_string()))?;
        detections.push(MaskDetection { meta, mask });
    }
    Ok(ReadMasks {
        detections,
        warnings,
    })
}

/// Writes an instance map and its sidecar.
pub fn write_masks(
    png_path: &Path,
    json_path: &Path,
    width: u32,
    height: u32,
    instance_map: &[u16],
    metas: &[MaskMeta],
) -> Result<()> {
    if instance_map.len() != (width as usize) * (height as usize) {
        return Err(Error::invalid("instance map size does not match the image size"));
    }
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| Error::invalid(e.to_string()))?;
        let data: Vec<u8> = instance_map.iter().flat_map(|v| v.to_be_bytes()).collect();
        writer
            .write_image_data(&data)
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    fs::write(png_path, bytes).map_err(|e| Error::io(png_path, e))?;
    let json = serde_json::to_string_pretty(metas).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(json_path, json + "\n").map_err(|e| Error::io(json_path, e))
}
