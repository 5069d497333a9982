use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pose::Vec3;
use crate::error::{Error, Result};

/// Axis-aligned box in the template's canonical frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl TightBox {
    pub fn of_points(points: &[Vec3]) -> Option<TightBox> {
        let first = points.first()?;
        let mut min = *first;
        let mut max = *first;
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(TightBox {
            min: min.into(),
            max: max.into(),
        })
    }

    pub fn centre(&self) -> Vec3 {
        (Vec3::from(self.min) + Vec3::from(self.max)) * 0.5
    }

    /// Extents along canonical (x, y, z) = (width, height, length).
    pub fn extents(&self) -> Vec3 {
        Vec3::from(self.max) - Vec3::from(self.min)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            *c = Vec3::new(
                if i & 1 == 0 { a[0] } else { b[0] },
                if i & 2 == 0 { a[1] } else { b[1] },
                if i & 4 == 0 { a[2] } else { b[2] },
            );
        }
        out
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }

    /// Squared distance from `p` to the solid box (zero inside).
    pub fn sq_distance(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
            d += e * e;
        }
        d
    }
}

/// Which feature of a triangle the closest point lies on. Vertex and edge
/// indices follow the triangle's own vertex order: edge 0 = ab, 1 = bc, 2 = ca.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Face,
    Edge(u8),
    Vertex(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub sq_distance: f64,
    pub point: Vec3,
    pub triangle: usize,
    pub region: Region,
}

#[derive(Debug, Clone)]
struct TriangleCache {
    a: Vec3,
    ab: Vec3,
    ac: Vec3,
    lo: Vec3,
    hi: Vec3,
}

impl TriangleCache {
    fn new(a: Vec3, b: Vec3, c: Vec3) -> Self {
        TriangleCache {
            a,
            ab: b - a,
            ac: c - a,
            lo: a.inf(&b).inf(&c),
            hi: a.sup(&b).sup(&c),
        }
    }

    #[inline]
    fn aabb_sq_distance(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = (self.lo[k] - p[k]).max(p[k] - self.hi[k]).max(0.0);
            d += e * e;
        }
        d
    }

    /// Closest point on the triangle (Voronoi-region walk).
    #[inline]
    fn closest(&self, p: &Vec3) -> (Vec3, Region) {
        let (a, ab, ac) = (self.a, self.ab, self.ac);
        let ap = p - a;
        let d1 = ab.dot(&ap);
        let d2 = ac.dot(&ap);
        if d1 <= 0.0 && d2 <= 0.0 {
            return (a, Region::Vertex(0));
        }
        let bp = ap - ab;
        let d3 = ab.dot(&bp);
        let d4 = ac.dot(&bp);
        if d3 >= 0.0 && d4 <= d3 {
            return (a + ab, Region::Vertex(1));
        }
        let vc = d1 * d4 - d3 * d2;
        if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            let v = d1 / (d1 - d3);
            return (a + ab * v, Region::Edge(0));
        }
        let cp = ap - ac;
        let d5 = ab.dot(&cp);
        let d6 = ac.dot(&cp);
        if d6 >= 0.0 && d5 <= d6 {
            return (a + ac, Region::Vertex(2));
        }
        let vb = d5 * d2 - d1 * d6;
        if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            let w = d2 / (d2 - d6);
            return (a + ac * w, Region::Edge(2));
        }
        let va = d3 * d6 - d5 * d4;
        if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
            let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
            return (a + ab + (ac - ab) * w, Region::Edge(1));
        }
        let denom = 1.0 / (va + vb + vc);
        let v = vb * denom;
        let w = vc * denom;
        (a + ab * v + ac * w, Region::Face)
    }

    /// Möller–Trumbore; returns the ray parameter of the hit, if any.
    #[inline]
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let pvec = dir.cross(&self.ac);
        let det = self.ab.dot(&pvec);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let tvec = origin - self.a;
        let u = tvec.dot(&pvec) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let qvec = tvec.cross(&self.ab);
        let v = dir.dot(&qvec) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        Some(self.ac.dot(&qvec) * inv)
    }
}

/// Canonical object surface `S0` with its tight box and keypoints.
///
/// The canonical frame is centred on the box: x spans the width, y the
/// height (pointing down, as in the camera frame) and z the length, with the
/// front of the object at `+z`.
#[derive(Debug, Clone)]
pub struct TemplateMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    bbox: TightBox,
    keypoint_centre: Vec3,
    keypoint_front: Vec3,
    cache: Vec<TriangleCache>,
    area_cdf: Vec<f64>,
}

impl TemplateMesh {
    /// Builds a template, shifting the vertices so the tight box is centred
    /// on the origin.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::invalid("template mesh has no triangles"));
        }
        if let Some(t) = triangles
            .iter()
            .find(|t| t.iter().any(|&i| i >= vertices.len()))
        {
            return Err(Error::invalid(format!(
                "triangle {t:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid("template vertices must be finite"));
        }
        let raw_box = TightBox::of_points(&vertices).expect("non-empty");
        let shift = raw_box.centre();
        let vertices: Vec<Vec3> = vertices.into_iter().map(|v| v - shift).collect();
        let bbox = TightBox::of_points(&vertices).expect("non-empty");

        let cache: Vec<TriangleCache> = triangles
            .iter()
            .map(|t| TriangleCache::new(vertices[t[0]], vertices[t[1]], vertices[t[2]]))
            .collect();
        let mut total = 0.0;
        let area_cdf = cache
            .iter()
            .map(|c| {
                total += 0.5 * c.ab.cross(&c.ac).norm();
                total
            })
            .collect();
        Ok(TemplateMesh {
            keypoint_centre: Vec3::zeros(),
            keypoint_front: Vec3::new(0.0, 0.0, bbox.max[2]),
            vertices,
            triangles,
            bbox,
            cache,
            area_cdf,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn tight_box(&self) -> &TightBox {
        &self.bbox
    }

    pub fn keypoint_centre(&self) -> Vec3 {
        self.keypoint_centre
    }

    pub fn keypoint_front(&self) -> Vec3 {
        self.keypoint_front
    }

    pub fn surface_area(&self) -> f64 {
        *self.area_cdf.last().unwrap_or(&0.0)
    }

    pub fn triangle_vertices(&self, index: usize) -> [Vec3; 3] {
        let c = &self.cache[index];
        [c.a, c.a + c.ab, c.a + c.ac]
    }

    /// Exact closest point over all triangles. Equal distances resolve to
    /// the lowest triangle index.
    pub fn closest_point(&self, p: &Vec3) -> ClosestPoint {
        self.closest_point_hinted(p, 0)
    }

    /// Same result as [`closest_point`](Self::closest_point); `hint` is a
    /// triangle likely to be near, which tightens the culling bound early.
    pub fn closest_point_hinted(&self, p: &Vec3, hint: usize) -> ClosestPoint {
        let hint = hint.min(self.cache.len() - 1);
        let (q, region) = self.cache[hint].closest(p);
        let mut best = ClosestPoint {
            sq_distance: (q - p).norm_squared(),
            point: q,
            triangle: hint,
            region,
        };
        for (i, tri) in self.cache.iter().enumerate() {
            if i == hint {
                continue;
            }
            let bound = tri.aabb_sq_distance(p);
            if bound > best.sq_distance || (bound == best.sq_distance && i > best.triangle) {
                continue;
            }
            let (q, region) = tri.closest(p);
            let d = (q - p).norm_squared();
            if d < best.sq_distance || (d == best.sq_distance && i < best.triangle) {
                best = ClosestPoint {
                    sq_distance: d,
                    point: q,
                    triangle: i,
                    region,
                };
            }
        }
        best
    }

    /// Closest hit along `origin + t·dir` for `t > t_min`.
    pub fn ray_hit(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, tri) in self.cache.iter().enumerate() {
            if let Some(t) = tri.intersect(origin, dir) {
                if t > t_min && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// True when the open segment `from → to` crosses the surface before
    /// reaching `to` (with a small relative tolerance at the far end).
    pub fn segment_blocked(&self, from: &Vec3, to: &Vec3) -> bool {
        let dir = to - from;
        self.cache.iter().any(|tri| {
            tri.intersect(from, &dir)
                .is_some_and(|t| t > 1e-9 && t < 1.0 - 1e-7)
        })
    }

    /// Uniform sample on the surface (area-weighted triangle choice, then
    /// uniform barycentric). Returns the point and its triangle.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, usize) {
        let total = self.surface_area();
        let u: f64 = rng.random::<f64>() * total;
        let idx = self
            .area_cdf
            .partition_point(|&c| c <= u)
            .min(self.cache.len() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let c = &self.cache[idx];
        (c.a + c.ab * (s * (1.0 - r2)) + c.ac * (s * r2), idx)
    }

    /// Outward-facing unit normal of a triangle, by its winding.
    pub fn triangle_normal(&self, index: usize) -> Vec3 {
        let c = &self.cache[index];
        c.ab.cross(&c.ac).normalize()
    }
}

/// Exact squared distance from `point` to the mesh surface, with the closest
/// surface point.
pub fn point_to_mesh_sq_distance(point: &Vec3, mesh: &TemplateMesh) -> (f64, Vec3) {
    let c = mesh.closest_point(point);
    (c.sq_distance, c.point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn big_square() -> TemplateMesh {
        let v = vec![
            Vec3::new(-5.0, 0.0, -5.0),
            Vec3::new(5.0, 0.0, -5.0),
            Vec3::new(5.0, 0.0, 5.0),
            Vec3::new(-5.0, 0.0, 5.0),
        ];
        TemplateMesh::new(v, vec![[0, 2, 1], [0, 3, 2]]).unwrap()
    }

    #[test]
    fn on_face_is_zero_and_offset_is_squared() {
        let m = big_square();
        let (d, q) = point_to_mesh_sq_distance(&Vec3::new(1.0, 0.0, 2.0), &m);
        assert_eq!(d, 0.0);
        assert_eq!(q, Vec3::new(1.0, 0.0, 2.0));
        let (d, _) = point_to_mesh_sq_distance(&Vec3::new(1.0, 0.5, 2.0), &m);
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn edge_and_vertex_regions() {
        let m = big_square();
        let c = m.closest_point(&Vec3::new(7.0, 0.0, 7.0));
        assert!(matches!(c.region, Region::Vertex(_)));
        assert!((c.sq_distance - 8.0).abs() < 1e-12);
        let c = m.closest_point(&Vec3::new(0.0, 1.0, 6.0));
        assert!(matches!(c.region, Region::Edge(_)));
        assert!((c.sq_distance - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hint_does_not_change_result() {
        let m = big_square();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = Vec3::new(
                rng.random_range(-8.0..8.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-8.0..8.0),
            );
            let a = m.closest_point_hinted(&p, 0);
            let b = m.closest_point_hinted(&p, 1);
            assert_eq!(a.sq_distance, b.sq_distance);
        }
    }

    #[test]
    fn rejects_bad_indices_and_empty() {
        assert!(TemplateMesh::new(vec![Vec3::zeros()], vec![[0, 1, 2]]).is_err());
        assert!(TemplateMesh::new(vec![Vec3::zeros()], vec![]).is_err());
    }

    #[test]
    fn box_is_centred_and_tight() {
        let v = vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(3.0, 1.0, 1.0),
            Vec3::new(1.0, 2.0, 5.0),
        ];
        let m = TemplateMesh::new(v, vec![[0, 1, 2]]).unwrap();
        assert_eq!(m.tight_box().centre(), Vec3::zeros());
        assert_eq!(m.tight_box().extents(), Vec3::new(2.0, 1.0, 4.0));
        assert_eq!(m.keypoint_front(), Vec3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn ray_hits_square() {
        let m = big_square();
        let hit = m.ray_hit(&Vec3::new(0.0, -2.0, 0.0), &Vec3::new(0.0, 1.0, 0.0), 0.0);
        assert!((hit.unwrap().0 - 2.0).abs() < 1e-12);
        assert!(m.segment_blocked(&Vec3::new(0.0, -2.0, 0.0), &Vec3::new(0.0, 2.0, 0.0)));
        assert!(!m.segment_blocked(&Vec3::new(0.0, -2.0, 0.0), &Vec3::new(0.0, 0.0, 0.0)));
    }
}
