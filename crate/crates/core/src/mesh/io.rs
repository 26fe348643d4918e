//! OBJ (ASCII, 1-based faces) and binary little-endian PLY.

use std::fmt::Write as _;
use std::path::Path;

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::fields::{Rgb, Vec3};

pub fn encode_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for (k, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[k];
                writeln!(out, "v {} {} {} {} {} {}", v.x, v.y, v.z, c.x, c.y, c.z)
            }
            None => writeln!(out, "v {} {} {}", v.x, v.y, v.z),
        }
        .expect("writing to a String");
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("writing to a String");
    }
    out
}

/// Reads `v` and `f` records; face entries may carry `/vt/vn` suffixes,
/// polygons are fanned into triangles.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut triangles = Vec::new();
    let num = |s: &str, line: usize| -> Result<f64> {
        s.parse().map_err(|_| Error::Parse(format!("obj line {line}: bad number {s:?}")))
    };
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let xs: Vec<f64> = it.map(|s| num(s, ln + 1)).collect::<Result<_>>()?;
                if xs.len() < 3 {
                    return Err(Error::Parse(format!("obj line {}: vertex needs 3 coordinates", ln + 1)));
                }
                vertices.push(Vec3::new(xs[0], xs[1], xs[2]));
                if xs.len() >= 6 {
                    colors.push(Rgb::new(xs[3], xs[4], xs[5]));
                }
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or("");
                        match head.parse::<u32>() {
                            Ok(i) if i >= 1 => Ok(i - 1),
                            _ => Err(Error::Parse(format!("obj line {}: bad face index {s:?}", ln + 1))),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse(format!("obj line {}: face needs 3 indices", ln + 1)));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let colors = (!colors.is_empty()).then_some(colors);
    TriangleMesh::new(vertices, triangles, colors)
}

pub fn export_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_obj(mesh)).map_err(Error::io(path))
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    parse_obj(&std::fs::read_to_string(path).map_err(Error::io(path))?)
}

pub fn encode_ply(mesh: &TriangleMesh) -> Vec<u8> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        mesh.vertices.len()
    );
    if mesh.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.triangles.len()
    ));
    let mut out = header.into_bytes();
    for (k, v) in mesh.vertices.iter().enumerate() {
        for c in v.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        if let Some(colors) = &mesh.colors {
            out.extend(colors[k].iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for i in t {
            out.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    out
}

/// Reads the layout [`encode_ply`] writes.
pub fn decode_ply(bytes: &[u8]) -> Result<TriangleMesh> {
    let bad = |m: &str| Error::MalformedHeader(format!("ply: {m}"));
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("no end_header"))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") || lines.next() != Some("format binary_little_endian 1.0") {
        return Err(bad("expected binary_little_endian 1.0"));
    }
    let (mut n_vert, mut n_face, mut color) = (None, None, false);
    let mut vertex_props = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["element", "vertex", n] => n_vert = Some(n.parse::<usize>().map_err(|_| bad("vertex count"))?),
            ["element", "face", n] => n_face = Some(n.parse::<usize>().map_err(|_| bad("face count"))?),
            ["property", "float", name] if n_face.is_none() => vertex_props.push(*name),
            ["property", "uchar", name] if n_face.is_none() => {
                color = true;
                vertex_props.push(*name);
            }
            ["property", "list", "uchar", "int", _] => {}
            ["end_header"] | ["comment", ..] => {}
            _ => return Err(bad(&format!("unsupported line {line:?}"))),
        }
    }
    let expected: &[&str] = if color {
        &["x", "y", "z", "red", "green", "blue"]
    } else {
        &["x", "y", "z"]
    };
    if vertex_props != expected {
        return Err(bad("unsupported vertex properties"));
    }
    let n_vert = n_vert.ok_or_else(|| bad("missing vertex element"))?;
    let n_face = n_face.ok_or_else(|| bad("missing face element"))?;
    let stride = 12 + if color { 3 } else { 0 };
    let body = &bytes[end..];
    let need = n_vert * stride + n_face * 13;
    if body.len() < need {
        return Err(Error::TruncatedPayload {
            expected: need,
            found: body.len(),
        });
    }
    if body.len() > need {
        return Err(Error::PayloadMismatch(format!("{} trailing bytes", body.len() - need)));
    }
    let f32_at = |o: usize| f32::from_le_bytes(body[o..o + 4].try_into().expect("4 bytes")) as f64;
    let mut vertices = Vec::with_capacity(n_vert);
    let mut colors = Vec::new();
    for k in 0..n_vert {
        let o = k * stride;
        vertices.push(Vec3::new(f32_at(o), f32_at(o + 4), f32_at(o + 8)));
        if color {
            colors.push(Rgb::new(body[o + 12] as f64, body[o + 13] as f64, body[o + 14] as f64) / 255.0);
        }
    }
    let mut triangles = Vec::with_capacity(n_face);
    let base = n_vert * stride;
    for k in 0..n_face {
        let o = base + k * 13;
        if body[o] != 3 {
            return Err(Error::PayloadMismatch(format!("face {k} has {} vertices", body[o])));
        }
        let idx = |m: usize| i32::from_le_bytes(body[o + 1 + 4 * m..o + 5 + 4 * m].try_into().expect("4 bytes"));
        let t = [idx(0), idx(1), idx(2)];
        if t.iter().any(|i| *i < 0) {
            return Err(Error::PayloadMismatch(format!("face {k} has a negative index")));
        }
        triangles.push(t.map(|i| i as u32));
    }
    TriangleMesh::new(vertices, triangles, color.then_some(colors))
}

pub fn export_ply(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ply(mesh)).map_err(Error::io(path))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    decode_ply(&std::fs::read(path).map_err(Error::io(path))?)
}
