//! WebAssembly bindings for the browser demo. Every function returns a JSON
//! string; failures come back as `{"error": "..."}`.

use autolabel3d::eval::{bev_intersection, bev_iou, iou_3d};
use autolabel3d::fit::fit_direct;
use autolabel3d::geometry::{posed_box, OrientedBox3D, Pose4DoF, Vec3};
use autolabel3d::losses::{half_chamfer, YawBins};
use autolabel3d::synth::{observe, Scan, SynthConfig};
use autolabel3d::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

const DEMO_BINS: usize = 64;
const MAX_DRAWS: u64 = 50;
const FIT_ITERATIONS: usize = 100;

/// Object placement and scan settings shared by the scan and loss-curve
/// views.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    pub yaw_deg: f64,
    pub x: f64,
    pub z: f64,
    pub outlier_fraction: f64,
}

fn footprint(b: &OrientedBox3D) -> Vec<[f64; 2]> {
    b.footprint().iter().map(|p| [p.x, p.y]).collect()
}

fn scene(params: &SceneParams) -> autolabel3d::Result<(SynthConfig, Pose4DoF, Scan)> {
    let config = SynthConfig {
        outlier_fraction: params.outlier_fraction,
        ..SynthConfig::default()
    };
    config.validate()?;
    let mesh = config.template()?;
    let half_height = mesh.tight_box().extents()[1] / 2.0;
    let pose = Pose4DoF::try_new(
        params.yaw_deg.to_radians(),
        Vec3::new(params.x, config.ground_y - half_height, params.z),
    )?;
    // a different draw of surface samples can make a marginal view usable
    let mut last = None;
    for draw in 0..MAX_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(draw));
        match observe(&mut rng, &mesh, &pose, &config) {
            Ok(scan) => return Ok((config, pose, scan)),
            Err(e @ Error::Resample(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Resample("no usable view".into())))
}

fn respond(result: autolabel3d::Result<serde_json::Value>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> autolabel3d::Result<T> {
    serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Simulated scan of a car plus a direct fit. Returns the bird's-eye
/// points (x, z, outlier flag), ground-truth and fitted footprints.
pub fn scan_and_fit(params_json: &str) -> String {
    respond((|| {
        let params: SceneParams = parse(params_json)?;
        let (config, pose, scan) = scene(&params)?;
        let mesh = config.template()?;
        let fit = fit_direct(&scan.points, &mesh, &YawBins::new(DEMO_BINS)?, FIT_ITERATIONS)?;
        let points: Vec<(f64, f64, bool)> = scan
            .points
            .iter()
            .zip(&scan.outlier_flags)
            .map(|(p, &o)| (p.x, p.z, o))
            .collect();
        Ok(json!({
            "points": points,
            "gt": footprint(&posed_box(&pose, &mesh)),
            "fit": footprint(&posed_box(&fit.pose, &mesh)),
            "fit_yaw_deg": fit.pose.yaw().to_degrees(),
            "fit_iterations": fit.iterations,
        }))
    })())
}

/// Half-Chamfer loss of the scan at every bin centre, with the translation
/// held at the ground truth.
pub fn yaw_loss_curve(params_json: &str, n_bins: usize) -> String {
    respond((|| {
        let params: SceneParams = parse(params_json)?;
        let (config, pose, scan) = scene(&params)?;
        let mesh = config.template()?;
        let bins = YawBins::new(n_bins)?;
        let mut curve = Vec::with_capacity(n_bins);
        for k in 0..n_bins {
            let candidate = Pose4DoF::new(bins.centre(k), pose.translation());
            curve.push((bins.centre(k).to_degrees(), half_chamfer(&candidate, &mesh, &scan.points)?));
        }
        Ok(json!({ "curve": curve, "gt_yaw_deg": pose.yaw().to_degrees() }))
    })())
}

/// One box as entered in the page: centre and size in metres, yaw in
/// degrees.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
pub struct BoxParams {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw_deg: f64,
}

impl BoxParams {
    fn to_box(self) -> autolabel3d::Result<OrientedBox3D> {
        OrientedBox3D::new(
            Vec3::new(self.x, self.y, self.z),
            [self.length, self.width, self.height],
            self.yaw_deg.to_radians(),
            1.0,
        )
    }
}

/// Rotated bird's-eye and 3D IoU of two boxes, with their footprints.
pub fn box_overlap(a_json: &str, b_json: &str) -> String {
    respond((|| {
        let a = parse::<BoxParams>(a_json)?.to_box()?;
        let b = parse::<BoxParams>(b_json)?.to_box()?;
        Ok(json!({
            "bev_iou": bev_iou(&a, &b),
            "iou_3d": iou_3d(&a, &b),
            "intersection_area": bev_intersection(&a, &b),
            "a": footprint(&a),
            "b": footprint(&b),
        }))
    })())
}

#[wasm_bindgen(js_name = scanAndFit)]
pub fn scan_and_fit_js(params_json: &str) -> String {
    scan_and_fit(params_json)
}

#[wasm_bindgen(js_name = yawLossCurve)]
pub fn yaw_loss_curve_js(params_json: &str, n_bins: usize) -> String {
    yaw_loss_curve(params_json, n_bins)
}

#[wasm_bindgen(js_name = boxOverlap)]
pub fn box_overlap_js(a_json: &str, b_json: &str) -> String {
    box_overlap(a_json, b_json)
}
