//! ASCII PLY point clouds: `vertex` element with `x y z` and optional
//! `red green blue`. Colors are uchar (mapped to `[0, 1]` by `/255`) or, for
//! values that are not multiples of 1/255, float/double already in `[0, 1]`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};

struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, String)>,
}

pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let bad = |detail: String| Error::malformed("PLY", path, detail);
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(bad("missing 'ply' magic line".into())),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        let Some((lineno, line)) = lines.next() else {
            return Err(bad("unterminated header".into()));
        };
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(bad(format!("line {}: only 'format ascii 1.0' is supported", lineno + 1)));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| bad(format!("line {}: element without name", lineno + 1)))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad(format!("line {}: element count is not an integer", lineno + 1)))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad(format!("line {}: property before any element", lineno + 1)))?;
                let ty = tok.next().ok_or_else(|| bad(format!("line {}: property without type", lineno + 1)))?;
                if ty == "list" && el.name == "vertex" {
                    return Err(bad("list properties on vertices are not supported".into()));
                }
                let name = tok.last().ok_or_else(|| bad(format!("line {}: property without name", lineno + 1)))?;
                el.properties.push((ty.to_string(), name.to_string()));
            }
            Some("end_header") => break,
            Some(other) => return Err(bad(format!("line {}: unknown header keyword '{other}'", lineno + 1))),
        }
    }
    if !saw_format {
        return Err(bad("missing format line".into()));
    }
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| bad("no 'vertex' element".into()))?;

    // Skip elements stored ahead of the vertices.
    for el in &elements[..vertex_pos] {
        for _ in 0..el.count {
            lines.next().ok_or_else(|| bad(format!("truncated '{}' element", el.name)))?;
        }
    }
    let vertex = &elements[vertex_pos];
    let find = |name: &str| vertex.properties.iter().position(|(_, n)| n == name);
    let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
        return Err(bad("vertex element needs x, y and z properties".into()));
    };
    for &i in &[ix, iy, iz] {
        let ty = vertex.properties[i].0.as_str();
        if !matches!(ty, "float" | "float32" | "double" | "float64") {
            return Err(bad(format!("coordinate '{}' has non-float type '{ty}'", vertex.properties[i].1)));
        }
    }
    let color_idx = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => {
            for &i in &[r, g, b] {
                let ty = vertex.properties[i].0.as_str();
                if !matches!(ty, "uchar" | "uint8" | "float" | "float32" | "double" | "float64") {
                    return Err(bad(format!(
                        "color '{}' must be uchar or floating point, got '{ty}'",
                        vertex.properties[i].1
                    )));
                }
            }
            Some([r, g, b])
        }
        (None, None, None) => None,
        _ => return Err(bad("partial color properties (need red, green and blue)".into())),
    };
    let single = |i: usize| matches!(vertex.properties[i].0.as_str(), "float" | "float32");

    let mut positions = Vec::with_capacity(vertex.count);
    let mut colors = color_idx.map(|_| Vec::with_capacity(vertex.count));
    for k in 0..vertex.count {
        let (lineno, line) = lines.next().ok_or_else(|| bad(format!("expected {} vertices, found {k}", vertex.count)))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != vertex.properties.len() {
            return Err(bad(format!(
                "line {}: expected {} values, found {}",
                lineno + 1,
                vertex.properties.len(),
                fields.len()
            )));
        }
        let coord = |i: usize| -> Result<f64> {
            let v = if single(i) {
                fields[i].parse::<f32>().map(f64::from)
            } else {
                fields[i].parse::<f64>()
            };
            match v {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad(format!("line {}: bad coordinate '{}'", lineno + 1, fields[i]))),
            }
        };
        positions.push(Vector3::new(coord(ix)?, coord(iy)?, coord(iz)?));
        if let (Some(idx), Some(cs)) = (color_idx, colors.as_mut()) {
            let mut c = [0.0; 3];
            for (slot, &i) in c.iter_mut().zip(&idx) {
                let bad_color = || bad(format!("line {}: bad color '{}'", lineno + 1, fields[i]));
                *slot = match vertex.properties[i].0.as_str() {
                    "uchar" | "uint8" => f64::from(fields[i].parse::<u8>().map_err(|_| bad_color())?) / 255.0,
                    ty => {
                        let v = if matches!(ty, "float" | "float32") {
                            fields[i].parse::<f32>().map(f64::from)
                        } else {
                            fields[i].parse::<f64>()
                        };
                        v.map_err(|_| bad_color())?
                    }
                };
            }
            cs.push(c);
        }
    }
    PointCloud::new(positions, colors).map_err(|e| bad(e.to_string()))
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, path)
}

/// Coordinates are written as `float` when every value is exactly representable
/// in 32 bits and as `double` otherwise, so reading back is lossless.
pub fn format_ply(cloud: &PointCloud) -> String {
    let single = cloud
        .positions
        .iter()
        .all(|p| p.iter().all(|&v| f64::from(v as f32) == v));
    let ty = if single { "float" } else { "double" };
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(out, "property {ty} {axis}");
    }
    let byte_colors = cloud
        .colors
        .as_ref()
        .map(|cs| cs.iter().flatten().all(|&c| (c * 255.0).round() / 255.0 == c));
    match byte_colors {
        Some(true) => out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n"),
        Some(false) => out.push_str("property double red\nproperty double green\nproperty double blue\n"),
        None => {}
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.positions.iter().enumerate() {
        if single {
            let _ = write!(out, "{} {} {}", p.x as f32, p.y as f32, p.z as f32);
        } else {
            let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        }
        if let Some(colors) = &cloud.colors {
            let [r, g, b] = colors[i];
            if byte_colors == Some(true) {
                let [r, g, b] = [r, g, b].map(|c| (c * 255.0).round() as u8);
                let _ = write!(out, " {r} {g} {b}");
            } else {
                let _ = write!(out, " {r} {g} {b}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, format_ply(cloud)).map_err(|e| Error::io(path, e))
}
