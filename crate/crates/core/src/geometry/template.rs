use super::mesh::TemplateMesh;
use super::pose::Vec3;
use crate::error::{Error, Result};

/// Default passenger-car size, metres (length, width, height).
pub const DEFAULT_CAR_DIMENSIONS: (f64, f64, f64) = (4.0, 1.6, 1.5);

// Cabin proportions relative to the overall box.
const BODY_HEIGHT: f64 = 0.55;
const CABIN_WIDTH: f64 = 0.85;
const CABIN_REAR: f64 = -0.35;
const CABIN_FRONT: f64 = 0.15;

/// Shape parameters of the two-box car, all in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarShape {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub body_height: f64,
    pub cabin_width: f64,
    pub cabin_rear: f64,
    pub cabin_front: f64,
}

impl CarShape {
    pub fn new(length: f64, width: f64, height: f64) -> Result<Self> {
        for (name, v) in [("length", length), ("width", width), ("height", height)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("car {name} must be positive, got {v}")));
            }
        }
        Ok(CarShape {
            length,
            width,
            height,
            body_height: BODY_HEIGHT * height,
            cabin_width: CABIN_WIDTH * width,
            cabin_rear: CABIN_REAR * length,
            cabin_front: CABIN_FRONT * length,
        })
    }

    /// Area of the union shell: both box surfaces minus the two copies of
    /// the shared cabin footprint.
    pub fn surface_area(&self) -> f64 {
        let (l, w, hb) = (self.length, self.width, self.body_height);
        let (lc, wc, hc) = (
            self.cabin_front - self.cabin_rear,
            self.cabin_width,
            self.height - self.body_height,
        );
        let body = 2.0 * (l * w + l * hb + w * hb);
        let cabin = 2.0 * (lc * wc + lc * hc + wc * hc);
        body + cabin - 2.0 * lc * wc
    }
}

/// Low-poly two-box car: a full-size body slab with a narrower cabin set
/// towards the rear, so the front and back are distinguishable. The mesh is
/// a closed union shell with outward winding.
pub fn builtin_car_template(length: f64, width: f64, height: f64) -> Result<TemplateMesh> {
    let s = CarShape::new(length, width, height)?;
    let (hx, hy, hz) = (width / 2.0, height / 2.0, length / 2.0);
    let cx = s.cabin_width / 2.0;
    // y points down: the body occupies the bottom of the box
    let y_floor = hy;
    let y_deck = hy - s.body_height;
    let y_roof = -hy;
    let (z0, z1) = (s.cabin_rear, s.cabin_front);

    let mut vertices = Vec::new();
    let mut vid = |p: Vec3| {
        vertices.push(p);
        vertices.len() - 1
    };
    // body corners: floor then deck, counter-clockwise seen from above
    let body: Vec<usize> = [y_floor, y_deck]
        .iter()
        .flat_map(|&y| {
            [
                Vec3::new(-hx, y, -hz),
                Vec3::new(hx, y, -hz),
                Vec3::new(hx, y, hz),
                Vec3::new(-hx, y, hz),
            ]
        })
        .map(&mut vid)
        .collect();
    // cabin corners: on the deck, then at the roof
    let cabin: Vec<usize> = [y_deck, y_roof]
        .iter()
        .flat_map(|&y| {
            [
                Vec3::new(-cx, y, z0),
                Vec3::new(cx, y, z0),
                Vec3::new(cx, y, z1),
                Vec3::new(-cx, y, z1),
            ]
        })
        .map(&mut vid)
        .collect();

    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut quad = |q: [usize; 4], outward: Vec3| {
        let (a, b, c) = (vertices[q[0]], vertices[q[1]], vertices[q[2]]);
        if (b - a).cross(&(c - a)).dot(&outward) >= 0.0 {
            triangles.push([q[0], q[1], q[2]]);
            triangles.push([q[0], q[2], q[3]]);
        } else {
            triangles.push([q[0], q[2], q[1]]);
            triangles.push([q[0], q[3], q[2]]);
        }
    };
    let (f, d) = (&body[0..4], &body[4..8]);
    let (cb, ct) = (&cabin[0..4], &cabin[4..8]);
    let up = Vec3::new(0.0, -1.0, 0.0);
    quad([f[0], f[1], f[2], f[3]], -up);
    // body sides
    for k in 0..4 {
        let n = (k + 1) % 4;
        let mid = (vertices[f[k]] + vertices[f[n]]) * 0.5;
        let outward = Vec3::new(mid.x, 0.0, mid.z);
        quad([f[k], f[n], d[n], d[k]], outward);
    }
    // deck: a frame around the cabin footprint
    for k in 0..4 {
        let n = (k + 1) % 4;
        quad([d[k], d[n], cb[n], cb[k]], up);
    }
    // cabin sides and roof
    for k in 0..4 {
        let n = (k + 1) % 4;
        let mid = (vertices[cb[k]] + vertices[cb[n]]) * 0.5;
        let centre_z = (z0 + z1) / 2.0;
        let outward = Vec3::new(mid.x, 0.0, mid.z - centre_z);
        quad([cb[k], cb[n], ct[n], ct[k]], outward);
    }
    quad([ct[0], ct[1], ct[2], ct[3]], up);

    TemplateMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn car() -> TemplateMesh {
        let (l, w, h) = DEFAULT_CAR_DIMENSIONS;
        builtin_car_template(l, w, h).unwrap()
    }

    #[test]
    fn box_extents_are_exact() {
        let m = car();
        assert_eq!(m.tight_box().extents(), Vec3::new(1.6, 1.5, 4.0));
        assert!(m
            .vertices()
            .iter()
            .all(|v| m.tight_box().contains(v, 0.0)));
        assert_eq!(m.keypoint_centre(), Vec3::zeros());
        assert_eq!(m.keypoint_front(), Vec3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn surface_area_matches_union_shell() {
        let shape = CarShape::new(4.0, 1.6, 1.5).unwrap();
        // longhand: body 2(lw + l·hb + w·hb) - lc·wc, cabin 2(...) - lc·wc
        let (l, w, hb) = (4.0, 1.6, 0.825);
        let (lc, wc, hc) = (2.0, 1.36, 0.675);
        let expected = 2.0 * (l * w + l * hb + w * hb) + 2.0 * (lc * wc + lc * hc + wc * hc)
            - 2.0 * lc * wc;
        assert!((shape.surface_area() - expected).abs() < 1e-12);
        assert!((car().surface_area() - expected).abs() < 1e-9);
    }

    #[test]
    fn watertight_with_consistent_winding() {
        let m = car();
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        for t in m.triangles() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                // directed edge count: +1 one way, -1 the other
                let key = (a.min(b), a.max(b));
                *edges.entry(key).or_default() += if a < b { 1 } else { -1 };
            }
        }
        assert!(edges.values().all(|&v| v == 0), "every edge used once per direction");
    }

    #[test]
    fn normals_point_outward() {
        let m = car();
        // signed volume via divergence theorem is positive for outward winding
        let vol: f64 = m
            .triangles()
            .iter()
            .map(|t| {
                let [a, b, c] = [m.vertices()[t[0]], m.vertices()[t[1]], m.vertices()[t[2]]];
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum();
        let s = CarShape::new(4.0, 1.6, 1.5).unwrap();
        let expected = 4.0 * 1.6 * s.body_height
            + (s.cabin_front - s.cabin_rear) * s.cabin_width * (1.5 - s.body_height);
        assert!((vol - expected).abs() < 1e-9, "{vol} vs {expected}");
    }

    #[test]
    fn front_and_back_differ() {
        let m = car();
        let front_roof = m.vertices().iter().map(|v| v.z).fold(f64::MIN, f64::max);
        assert_eq!(front_roof, 2.0);
        let cabin_z: Vec<f64> = m
            .vertices()
            .iter()
            .filter(|v| v.y == -0.75)
            .map(|v| v.z)
            .collect();
        assert!(cabin_z.iter().all(|z| *z < 1.0 && *z > -1.5));
    }

    #[test]
    fn rejects_non_positive() {
        assert!(builtin_car_template(0.0, 1.0, 1.0).is_err());
        assert!(builtin_car_template(4.0, -1.0, 1.0).is_err());
    }
}
