//! Wavefront OBJ subset: `v x y z` and `f i j k ...` (1-based, fan
//! triangulated). Comments and blank lines are skipped; other directives are
//! ignored with a warning. Normals and texture coordinates are discarded.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::geometry::TriangleMesh;
use crate::math::Vec3;
use crate::{Error, Result};

fn parse_err(line: usize, message: impl Into<alloc::string::String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn load_mesh(bytes: &[u8]) -> Result<TriangleMesh> {
    let text = core::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        parse_err(line, "invalid UTF-8")
    })?;
    parse_obj(text)
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut polygons: Vec<(usize, Vec<u32>)> = Vec::new();
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(line_no, format!("bad vertex coordinate '{t}'"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 && coords.len() != 4 {
                    return Err(parse_err(line_no, "vertex needs 3 coordinates"));
                }
                let v = Vec3::new(coords[0], coords[1], coords[2]);
                if !v.is_finite() {
                    return Err(parse_err(line_no, "non-finite vertex coordinate"));
                }
                vertices.push(v);
            }
            Some("f") => {
                let idx: Vec<u32> = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let n: i64 = head.parse().map_err(|_| parse_err(line_no, format!("bad face index '{t}'")))?;
                        if n < 1 {
                            return Err(parse_err(line_no, "index out of range"));
                        }
                        u32::try_from(n - 1).map_err(|_| parse_err(line_no, "index out of range"))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(line_no, "face needs at least 3 vertices"));
                }
                polygons.push((line_no, idx));
            }
            Some(other) => {
                log::warn!("obj line {line_no}: ignoring directive '{other}'");
            }
            None => {}
        }
    }

    let mut faces = Vec::new();
    for (line_no, poly) in polygons {
        if let Some(_) = poly.iter().find(|&&ix| ix as usize >= vertices.len()) {
            return Err(parse_err(line_no, "index out of range"));
        }
        for k in 1..poly.len() - 1 {
            let tri = [poly[0], poly[k], poly[k + 1]];
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(parse_err(line_no, "face repeats a vertex index"));
            }
            faces.push(tri);
        }
    }
    if vertices.is_empty() || faces.is_empty() {
        return Err(parse_err(last_line, "empty mesh"));
    }
    TriangleMesh::new(vertices, faces).map_err(|e| parse_err(last_line, e.to_string()))
}

/// Serializes a mesh back into the same OBJ subset.
pub fn write_obj(mesh: &TriangleMesh) -> alloc::string::String {
    use core::fmt::Write;
    let mut s = alloc::string::String::new();
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}
