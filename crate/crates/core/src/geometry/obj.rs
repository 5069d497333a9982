//! Wavefront OBJ reading and writing (`v` and `f` records only).

use std::fmt::Write as _;
use std::path::Path;

use super::mesh::TemplateMesh;
use super::pose::Vec3;
use crate::error::{Error, Result};

/// Parses OBJ text. Faces with more than three vertices are fan-triangulated;
/// indices are 1-based, negative indices count back from the last vertex.
pub fn parse_obj(text: &str, path: &Path) -> Result<TemplateMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| {
                            Error::format_at_line(path, lineno, format!("bad coordinate {t:?}"))
                        })
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(Error::format_at_line(path, lineno, "vertex needs 3 coordinates"));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let raw: i64 = first.parse().map_err(|_| {
                            Error::format_at_line(path, lineno, format!("bad face index {t:?}"))
                        })?;
                        let resolved = if raw > 0 {
                            raw - 1
                        } else {
                            vertices.len() as i64 + raw
                        };
                        if raw == 0 || resolved < 0 || resolved >= vertices.len() as i64 {
                            return Err(Error::format_at_line(
                                path,
                                lineno,
                                format!("face index {raw} out of range"),
                            ));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::format_at_line(path, lineno, "face needs 3+ vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TemplateMesh::new(vertices, triangles)
}

pub fn read_obj(path: &Path) -> Result<TemplateMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

pub fn to_obj(mesh: &TemplateMesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::builtin_car_template;

    #[test]
    fn quad_is_fan_triangulated() {
        let text = "# square\nv 0 0 0\nv 1 0 0\nv 1 0 1\nv 0 0 1\nf 1 2 3 4\n";
        let m = parse_obj(text, Path::new("sq.obj")).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn slash_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3/1/1 -2//2 -1\n";
        let m = parse_obj(text, Path::new("t.obj")).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_obj("v 0 0 0\nv 1 0\n", Path::new("bad.obj")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_obj("v 0 0 0\nf 1 2 3\n", Path::new("bad.obj")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn car_survives_export() {
        let car = builtin_car_template(4.0, 1.6, 1.5).unwrap();
        let back = parse_obj(&to_obj(&car), Path::new("car.obj")).unwrap();
        assert_eq!(back.triangles(), car.triangles());
        assert!((back.surface_area() - car.surface_area()).abs() < 1e-9);
    }
}
