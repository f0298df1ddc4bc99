//! ASCII file formats: PLY point clouds, XYZ text clouds, OBJ-subset meshes.
//!
//! All writers emit shortest round-trip decimal representations, so a
//! save/load cycle reproduces every coordinate bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cloud::{PointCloud, TriangleMesh, Vec3};
use crate::error::{Error, Result};

/// Supported point-cloud formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    AsciiPly,
    XyzText,
}

impl CloudFormat {
    /// Infers the format from the file extension (`.ply` or `.xyz`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ply") => Ok(CloudFormat::AsciiPly),
            Some("xyz") | Some("txt") => Ok(CloudFormat::XyzText),
            other => Err(Error::InvalidArgument(format!(
                "cannot infer cloud format from extension {other:?}"
            ))),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_f64(path: &Path, line_no: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(path, line_no, format!("invalid number '{tok}'")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line_no, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    match format {
        CloudFormat::AsciiPly => load_ply(path),
        CloudFormat::XyzText => load_xyz(path),
    }
}

pub fn save_cloud(path: &Path, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let text = match format {
        CloudFormat::AsciiPly => ply_string(cloud),
        CloudFormat::XyzText => xyz_string(cloud),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Whitespace-separated `x y z` lines; `#` starts a comment.
fn load_xyz(path: &Path) -> Result<PointCloud> {
    let text = read_to_string(path)?;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 3 fields, found {}", toks.len()),
            ));
        }
        points.push(Vec3::new(
            parse_f64(path, line_no, toks[0])?,
            parse_f64(path, line_no, toks[1])?,
            parse_f64(path, line_no, toks[2])?,
        ));
    }
    if points.is_empty() {
        return Err(Error::Empty(format!("{}: no points", path.display())));
    }
    let source = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("cloud")
        .to_string();
    PointCloud::new(points, None, source)
}

fn xyz_string(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

/// ASCII PLY, vertex element only, `x y z` with optional `nx ny nz`.
fn load_ply(path: &Path) -> Result<PointCloud> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let mut expect = |want: &str, line_no: &mut usize| -> Result<String> {
        match lines.next() {
            Some((i, l)) => {
                *line_no = i + 1;
                let l = l.trim();
                if want.is_empty() || l.starts_with(want) {
                    Ok(l.to_string())
                } else {
                    Err(Error::parse(
                        path,
                        i + 1,
                        format!("expected '{want}', found '{l}'"),
                    ))
                }
            }
            None => Err(Error::parse(path, *line_no, format!("expected '{want}', found EOF"))),
        }
    };

    let mut line_no = 0usize;
    expect("ply", &mut line_no)?;
    expect("format ascii 1.0", &mut line_no)?;

    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    loop {
        let l = expect("", &mut line_no)?;
        if l == "end_header" {
            break;
        } else if l.starts_with("comment") {
            continue;
        } else if let Some(rest) = l.strip_prefix("element vertex ") {
            vertex_count = Some(rest.trim().parse().map_err(|_| {
                Error::parse(path, line_no, format!("invalid vertex count '{rest}'"))
            })?);
        } else if l.starts_with("element ") {
            return Err(Error::parse(path, line_no, format!("unsupported element '{l}'")));
        } else if let Some(rest) = l.strip_prefix("property ") {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() != 2 || !matches!(toks[0], "double" | "float") {
                return Err(Error::parse(path, line_no, format!("unsupported property '{l}'")));
            }
            props.push(toks[1].to_string());
        } else {
            return Err(Error::parse(path, line_no, format!("unexpected header line '{l}'")));
        }
    }

    let n = vertex_count
        .ok_or_else(|| Error::parse(path, line_no, "missing 'element vertex' declaration"))?;
    let has_normals = match props.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "nx", "ny", "nz"] => true,
        _ => {
            return Err(Error::parse(
                path,
                line_no,
                format!("unsupported property layout {props:?}"),
            ))
        }
    };

    let mut points = Vec::with_capacity(n);
    let mut normals = if has_normals { Some(Vec::with_capacity(n)) } else { None };
    for _ in 0..n {
        let (i, raw) = lines
            .next()
            .ok_or_else(|| Error::parse(path, line_no, "vertex data ended early"))?;
        let line_no = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        let want = if has_normals { 6 } else { 3 };
        if toks.len() != want {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {want} fields, found {}", toks.len()),
            ));
        }
        points.push(Vec3::new(
            parse_f64(path, line_no, toks[0])?,
            parse_f64(path, line_no, toks[1])?,
            parse_f64(path, line_no, toks[2])?,
        ));
        if let Some(ns) = normals.as_mut() {
            ns.push(Vec3::new(
                parse_f64(path, line_no, toks[3])?,
                parse_f64(path, line_no, toks[4])?,
                parse_f64(path, line_no, toks[5])?,
            ));
        }
    }
    if points.is_empty() {
        return Err(Error::Empty(format!("{}: no points", path.display())));
    }
    let source = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("cloud")
        .to_string();
    PointCloud::new(points, normals, source)
}

fn ply_string(cloud: &PointCloud) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ply");
    let _ = writeln!(out, "format ascii 1.0");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    let _ = writeln!(out, "property double x");
    let _ = writeln!(out, "property double y");
    let _ = writeln!(out, "property double z");
    if cloud.normals().is_some() {
        let _ = writeln!(out, "property double nx");
        let _ = writeln!(out, "property double ny");
        let _ = writeln!(out, "property double nz");
    }
    let _ = writeln!(out, "end_header");
    match cloud.normals() {
        Some(ns) => {
            for (p, n) in cloud.points().iter().zip(ns) {
                let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z);
            }
        }
        None => {
            for p in cloud.points() {
                let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
            }
        }
    }
    out
}

/// ASCII OBJ subset: `v x y z` and triangular `f i j k` records (1-based
/// indices, no texture/normal slots).
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "v" => {
                if toks.len() != 4 {
                    return Err(Error::parse(path, line_no, "vertex record needs 3 coordinates"));
                }
                vertices.push(Vec3::new(
                    parse_f64(path, line_no, toks[1])?,
                    parse_f64(path, line_no, toks[2])?,
                    parse_f64(path, line_no, toks[3])?,
                ));
            }
            "f" => {
                if toks.len() != 4 {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!("face with {} vertices; only triangles are supported", toks.len() - 1),
                    ));
                }
                let mut idx = [0usize; 3];
                for (k, tok) in toks[1..].iter().enumerate() {
                    let one_based: usize = tok.parse().map_err(|_| {
                        Error::parse(path, line_no, format!("invalid face index '{tok}'"))
                    })?;
                    if one_based == 0 || one_based > vertices.len() {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("face index {one_based} out of range 1..={}", vertices.len()),
                        ));
                    }
                    idx[k] = one_based - 1;
                }
                triangles.push(idx);
            }
            other => {
                return Err(Error::parse(path, line_no, format!("unsupported record '{other}'")));
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn save_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
