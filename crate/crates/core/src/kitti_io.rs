//! Strict readers and deterministic writers for the on-disk formats: KITTI
//! labels, predictions and calibration, OBJ/STL meshes, PLY/XYZ clouds,
//! PGM/PFM mask and disparity images, and evaluation reports.
//!
//! Parsers reject malformed input with the offending line instead of
//! guessing. Writers format every float with [`fmt_g6`] so identical input
//! gives identical bytes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point3, StereoRig};
use crate::instance::{Box3D, ForegroundMask, Frame, MaskPixel, PointCloud};
use crate::metrics::{Detection, EvalReport, GroundTruthObject, Rect2D};
use crate::occupancy::TriangleMesh;

/// `%g`-style formatting with 6 significant digits: fixed notation for
/// decimal exponents in `[-4, 6)`, scientific otherwise, trailing zeros
/// removed.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mant), exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedLine {
        line,
        reason: reason.into(),
    }
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(malformed(line, format!("{what}: expected a finite number, got `{tok}`"))),
    }
}

/// One row of a KITTI label or prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub class: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox: Rect2D,
    /// `(h, w, l)` in meters.
    pub dimensions: [f64; 3],
    /// Bottom center of the box in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

const LABEL_FIELDS: [&str; 16] = [
    "type",
    "truncated",
    "occluded",
    "alpha",
    "bbox left",
    "bbox top",
    "bbox right",
    "bbox bottom",
    "height",
    "width",
    "length",
    "x",
    "y",
    "z",
    "rotation_y",
    "score",
];

impl LabelRecord {
    pub fn is_dont_care(&self) -> bool {
        self.class == "DontCare"
    }

    /// Parses one line; `line` is the 1-based line number for errors.
    pub fn parse(text: &str, line: usize) -> Result<Self> {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != 15 && toks.len() != 16 {
            return Err(malformed(line, format!("expected 15 or 16 fields, got {}", toks.len())));
        }
        let mut nums = [0.0; 15];
        for i in 1..toks.len() {
            if i == 2 {
                continue;
            }
            nums[i - 1] = parse_f64(toks[i], line, LABEL_FIELDS[i])?;
        }
        let occluded: i32 = toks[2]
            .parse()
            .map_err(|_| malformed(line, format!("occluded: expected an integer, got `{}`", toks[2])))?;
        let rec = LabelRecord {
            class: toks[0].to_string(),
            truncated: nums[0],
            occluded,
            alpha: nums[2],
            bbox: Rect2D::new(nums[3], nums[4], nums[5], nums[6]),
            dimensions: [nums[7], nums[8], nums[9]],
            location: [nums[10], nums[11], nums[12]],
            rotation_y: nums[13],
            score: (toks.len() == 16).then_some(nums[14]),
        };
        if rec.bbox.right < rec.bbox.left || rec.bbox.bottom < rec.bbox.top {
            return Err(malformed(line, "bbox right/bottom must not be less than left/top"));
        }
        if !rec.is_dont_care() {
            if !(0.0..=1.0).contains(&rec.truncated) {
                return Err(malformed(line, format!("truncated must lie in [0, 1], got {}", rec.truncated)));
            }
            if !(0..=3).contains(&rec.occluded) {
                return Err(malformed(line, format!("occluded must be 0..=3, got {}", rec.occluded)));
            }
            if let Some(i) = rec.dimensions.iter().position(|&d| d <= 0.0) {
                return Err(malformed(line, format!("{} must be positive", LABEL_FIELDS[8 + i])));
            }
        }
        Ok(rec)
    }

    pub fn to_line(&self) -> String {
        let mut f = vec![self.class.clone(), fmt_g6(self.truncated), self.occluded.to_string(), fmt_g6(self.alpha)];
        f.extend(
            [self.bbox.left, self.bbox.top, self.bbox.right, self.bbox.bottom]
                .into_iter()
                .chain(self.dimensions)
                .chain(self.location)
                .chain([self.rotation_y])
                .chain(self.score)
                .map(fmt_g6),
        );
        f.join(" ")
    }

    /// The 3D box; its center sits half a height above the bottom-center
    /// location (camera y points down).
    pub fn box3d(&self) -> Result<Box3D> {
        let [h, w, l] = self.dimensions;
        let [x, y, z] = self.location;
        Box3D::new(Point3::new(x, y - 0.5 * h, z), h, w, l, self.rotation_y)
    }

    /// Ground-truth object; don't-care regions get a placeholder box far
    /// outside the scene since only their 2D extent is used.
    pub fn to_ground_truth(&self) -> Result<GroundTruthObject> {
        let box3d = if self.is_dont_care() {
            Box3D::new(Point3::new(-1000.0, -1000.0, -1000.0), 1.0, 1.0, 1.0, 0.0)?
        } else {
            self.box3d()?
        };
        Ok(GroundTruthObject {
            class: self.class.clone(),
            box3d,
            bbox: self.bbox,
            truncation: self.truncated.max(0.0),
            occlusion: self.occluded.clamp(0, 3) as u8,
        })
    }

    pub fn to_detection(&self, cloud: Option<PointCloud>) -> Result<Detection> {
        let score = self
            .score
            .ok_or_else(|| Error::MalformedData { format: "prediction", reason: "missing score field".into() })?;
        Ok(Detection {
            class: self.class.clone(),
            box3d: self.box3d()?.with_score(score),
            bbox: self.bbox,
            score,
            cloud,
        })
    }
}

/// One record per non-empty line.
pub fn parse_label_file(text: &str) -> Result<Vec<LabelRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| LabelRecord::parse(l, n + 1))
        .collect()
}

pub fn write_label_file(records: &[LabelRecord]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}

/// Left (`P2`) and right (`P3`) rectified projection matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibRecord {
    pub p2: [[f64; 4]; 3],
    pub p3: [[f64; 4]; 3],
}

impl CalibRecord {
    pub fn fx(&self) -> f64 {
        self.p2[0][0]
    }

    pub fn fy(&self) -> f64 {
        self.p2[1][1]
    }

    pub fn cx(&self) -> f64 {
        self.p2[0][2]
    }

    pub fn cy(&self) -> f64 {
        self.p2[1][2]
    }

    /// `(P2[0][3] - P3[0][3]) / fx`.
    pub fn baseline(&self) -> f64 {
        (self.p2[0][3] - self.p3[0][3]) / self.fx()
    }

    pub fn rig(&self) -> Result<StereoRig> {
        StereoRig::new(CameraIntrinsics::new(self.fx(), self.fy(), self.cx(), self.cy())?, self.baseline())
    }
}

/// Reads the `P2:` and `P3:` rows; other keys are ignored.
pub fn parse_calib_file(text: &str) -> Result<CalibRecord> {
    let mut found: BTreeMap<&str, [[f64; 4]; 3]> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| malformed(n + 1, "expected `KEY: values`"))?;
        let key = key.trim();
        if key != "P2" && key != "P3" {
            continue;
        }
        let vals: Vec<&str> = rest.split_whitespace().collect();
        if vals.len() != 12 {
            return Err(Error::MalformedMatrix {
                key: key.into(),
                reason: format!("line {}: expected 12 numbers, got {}", n + 1, vals.len()),
            });
        }
        let mut m = [[0.0; 4]; 3];
        for (i, v) in vals.iter().enumerate() {
            m[i / 4][i % 4] = v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| Error::MalformedMatrix {
                key: key.into(),
                reason: format!("line {}: invalid number `{v}`", n + 1),
            })?;
        }
        if found.insert(if key == "P2" { "P2" } else { "P3" }, m).is_some() {
            return Err(malformed(n + 1, format!("duplicate key `{key}`")));
        }
    }
    let p2 = *found.get("P2").ok_or_else(|| Error::MissingKey("P2".into()))?;
    let p3 = *found.get("P3").ok_or_else(|| Error::MissingKey("P3".into()))?;
    let rec = CalibRecord { p2, p3 };
    if !(rec.fx() > 0.0) {
        return Err(Error::MalformedMatrix { key: "P2".into(), reason: "P2[0][0] must be positive".into() });
    }
    if !(rec.baseline() > 0.0) {
        return Err(Error::MalformedMatrix {
            key: "P3".into(),
            reason: format!("baseline (P2[0][3] - P3[0][3]) / fx must be positive, got {}", rec.baseline()),
        });
    }
    Ok(rec)
}

pub fn write_calib_file(c: &CalibRecord) -> String {
    let row = |m: &[[f64; 4]; 3]| m.iter().flatten().map(|&v| fmt_g6(v)).collect::<Vec<_>>().join(" ");
    format!("P2: {}\nP3: {}\n", row(&c.p2), row(&c.p3))
}

fn fmt_point(p: &Point3) -> String {
    format!("{} {} {}", fmt_g6(p.x), fmt_g6(p.y), fmt_g6(p.z))
}

/// ASCII OBJ with `v` and 1-based `f` records.
pub fn write_mesh_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        out.push_str("v ");
        out.push_str(&fmt_point(v));
        out.push('\n');
    }
    for t in mesh.triangles() {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    out
}

fn parse_xyz_tokens<'a>(toks: impl Iterator<Item = &'a str>, line: usize) -> Result<Point3> {
    let v: Vec<&str> = toks.collect();
    if v.len() != 3 {
        return Err(malformed(line, format!("expected 3 coordinates, got {}", v.len())));
    }
    Ok(Point3::new(
        parse_f64(v[0], line, "x")?,
        parse_f64(v[1], line, "y")?,
        parse_f64(v[2], line, "z")?,
    ))
}

/// Triangle-only OBJ reader. Texture and normal references in faces are
/// accepted and dropped; grouping and material records are ignored.
pub fn parse_mesh_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces: Vec<([usize; 3], usize)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        let Some(tag) = toks.next() else { continue };
        match tag {
            "v" => vertices.push(parse_xyz_tokens(toks, line)?),
            "f" => {
                let idx: Vec<&str> = toks.collect();
                if idx.len() != 3 {
                    return Err(malformed(line, format!("only triangles are supported, face has {} vertices", idx.len())));
                }
                let mut t = [0usize; 3];
                for (k, tok) in idx.iter().enumerate() {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: usize = first
                        .parse()
                        .map_err(|_| malformed(line, format!("invalid vertex index `{tok}`")))?;
                    if i == 0 {
                        return Err(malformed(line, "vertex indices are 1-based"));
                    }
                    t[k] = i - 1;
                }
                faces.push((t, line));
            }
            "vn" | "vt" | "o" | "g" | "s" | "usemtl" | "mtllib" => {}
            other => return Err(malformed(line, format!("unsupported record `{other}`"))),
        }
    }
    for (t, line) in &faces {
        if let Some(&bad) = t.iter().find(|&&i| i >= vertices.len()) {
            return Err(malformed(*line, format!("vertex {} does not exist ({} defined)", bad + 1, vertices.len())));
        }
    }
    let tris = faces.iter().map(|(t, _)| *t).collect();
    TriangleMesh::new(vertices, tris).map_err(|e| Error::MalformedData { format: "obj", reason: e.to_string() })
}

/// Binary STL with per-facet normals from the winding order.
pub fn write_mesh_stl(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.triangles().len());
    let mut header = [0u8; 80];
    let tag = b"stereo-shape binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.triangles().len() as u32).to_le_bytes());
    for t in 0..mesh.triangles().len() {
        let n = mesh.face_normal(t);
        for c in n.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        for p in mesh.triangle_points(t) {
            for c in p.coords.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

/// Reads a binary STL as an unwelded triangle soup.
pub fn parse_mesh_stl(bytes: &[u8]) -> Result<TriangleMesh> {
    let bad = |reason: String| Error::MalformedData { format: "stl", reason };
    if bytes.len() < 84 {
        return Err(bad(format!("file is {} bytes, shorter than the 84-byte header", bytes.len())));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as usize;
    let expected = 84 + 50 * count;
    if bytes.len() != expected {
        return Err(bad(format!("{count} facets need {expected} bytes, file has {}", bytes.len())));
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as f64;
    let mut vertices = Vec::with_capacity(3 * count);
    let mut tris = Vec::with_capacity(count);
    for t in 0..count {
        let base = 84 + 50 * t + 12;
        for v in 0..3 {
            let o = base + 12 * v;
            vertices.push(Point3::new(f(o), f(o + 4), f(o + 8)));
        }
        tris.push([3 * t, 3 * t + 1, 3 * t + 2]);
    }
    TriangleMesh::new(vertices, tris).map_err(|e| bad(e.to_string()))
}

/// ASCII PLY with `x y z` vertex properties, plus a `padding` flag column
/// when any point is padding.
pub fn write_cloud_ply(cloud: &PointCloud) -> String {
    let padded = cloud.padding_count() > 0;
    let mut out = format!(
        "ply\nformat ascii 1.0\ncomment frame {}\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.frame().name(),
        cloud.len()
    );
    if padded {
        out.push_str("property uchar padding\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        out.push_str(&fmt_point(p));
        if padded {
            out.push_str(if cloud.is_padding(i) { " 1" } else { " 0" });
        }
        out.push('\n');
    }
    out
}

/// Reads an ASCII PLY point cloud. The vertex element must declare `x`,
/// `y` and `z`; an optional `padding` property restores padding flags and
/// other scalar properties are skipped. Other elements must be empty.
/// A `comment frame camera|object` header line overrides `frame`.
pub fn parse_cloud_ply(text: &str, frame: Frame) -> Result<PointCloud> {
    let mut frame = frame;
    let mut lines = text.lines().enumerate();
    let mut next_header = |expect: &str| -> Result<(usize, &str)> {
        lines
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| malformed(0, format!("unexpected end of file, expected {expect}")))
    };
    let (n, first) = next_header("`ply`")?;
    if first.trim() != "ply" {
        return Err(malformed(n, "missing `ply` magic"));
    }
    let (n, fmt) = next_header("format line")?;
    if fmt.split_whitespace().collect::<Vec<_>>() != ["format", "ascii", "1.0"] {
        return Err(malformed(n, "only `format ascii 1.0` is supported"));
    }
    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let body_start;
    loop {
        let (n, l) = next_header("`end_header`")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => {
                body_start = n;
                break;
            }
            ["comment", "frame", name] => {
                frame = match *name {
                    "camera" => Frame::Camera,
                    "object" => Frame::Object,
                    other => return Err(malformed(n, format!("unknown frame `{other}`"))),
                };
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| malformed(n, format!("invalid element count `{count}`")))?;
                if *name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(malformed(n, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    if count != 0 {
                        return Err(malformed(n, format!("unsupported non-empty element `{name}`")));
                    }
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => return Err(malformed(n, "list properties on vertices are unsupported")),
            ["property", ty, name] => {
                const TYPES: [&str; 16] = [
                    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16",
                    "uint16", "int32", "uint32", "float32", "float64",
                ];
                if !TYPES.contains(ty) {
                    return Err(malformed(n, format!("unknown property type `{ty}`")));
                }
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            ["property", "list", _, _, _] => {}
            _ => return Err(malformed(n, format!("unrecognised header line `{l}`"))),
        }
    }
    let count = vertex_count.ok_or_else(|| malformed(body_start, "no vertex element declared"))?;
    let pos = |name: &str| props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (pos("x"), pos("y"), pos("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(malformed(body_start, "vertex element must declare x, y and z")),
    };
    let pad_i = pos("padding");
    let mut points = Vec::with_capacity(count);
    let mut padding = Vec::with_capacity(count);
    for (n, raw) in lines {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if points.len() == count {
            return Err(malformed(line, format!("more than the declared {count} vertices")));
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.len() != props.len() {
            return Err(malformed(line, format!("expected {} values, got {}", props.len(), toks.len())));
        }
        let vals: Vec<f64> = toks
            .iter()
            .zip(&props)
            .map(|(t, p)| parse_f64(t, line, p))
            .collect::<Result<_>>()?;
        points.push(Point3::new(vals[xi], vals[yi], vals[zi]));
        padding.push(match pad_i {
            None => false,
            Some(i) if vals[i] == 0.0 => false,
            Some(i) if vals[i] == 1.0 => true,
            Some(_) => return Err(malformed(line, "padding flag must be 0 or 1")),
        });
    }
    if points.len() != count {
        return Err(malformed(
            body_start,
            format!("header declares {count} vertices, file has {}", points.len()),
        ));
    }
    Ok(PointCloud::with_padding(frame, points, padding))
}

/// One `x y z` triple per line; `#` starts a comment.
pub fn parse_cloud_xyz(text: &str, frame: Frame) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        points.push(parse_xyz_tokens(content.split_whitespace(), n + 1)?);
    }
    Ok(PointCloud::new(frame, points))
}

/// Non-padding points, one per line.
pub fn write_cloud_xyz(cloud: &PointCloud) -> String {
    cloud.real_points().map(|p| fmt_point(p) + "\n").collect()
}

/// Greyscale image with its declared maximum value.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major, top row first.
    pub data: Vec<u16>,
}

fn pgm_err(reason: impl Into<String>) -> Error {
    Error::MalformedData { format: "pgm", reason: reason.into() }
}

/// Splits a Netpbm-style header into `count` whitespace-separated tokens,
/// skipping `#` comments, and returns them with the offset after the single
/// whitespace byte that ends the header.
fn netpbm_header(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut toks = Vec::new();
    let mut i = 0;
    while toks.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if i >= bytes.len() {
            return Err(pgm_err("truncated header"));
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        toks.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() && count > 0 {
        return Ok((toks, i));
    }
    Ok((toks, i + 1))
}

/// Reads binary (`P5`) or ASCII (`P2`) PGM.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (head, offset) = netpbm_header(bytes, 4)?;
    let magic = head[0].as_str();
    if magic != "P5" && magic != "P2" {
        return Err(pgm_err(format!("unsupported magic `{magic}`")));
    }
    let dim = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| pgm_err(format!("invalid {what} `{s}`")))
    };
    let width = dim(&head[1], "width")?;
    let height = dim(&head[2], "height")?;
    let maxval: u16 = head[3]
        .parse()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| pgm_err(format!("invalid maxval `{}`", head[3])))?;
    let n = width * height;
    let data: Vec<u16> = if magic == "P5" {
        let body = bytes.get(offset..).unwrap_or(&[]);
        let bpp = if maxval < 256 { 1 } else { 2 };
        if body.len() != n * bpp {
            return Err(pgm_err(format!("expected {} data bytes, got {}", n * bpp, body.len())));
        }
        if bpp == 1 {
            body.iter().map(|&b| b as u16).collect()
        } else {
            body.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        }
    } else {
        let body = std::str::from_utf8(bytes.get(offset..).unwrap_or(&[])).map_err(|_| pgm_err("non-ASCII P2 body"))?;
        let vals: Vec<u16> = body
            .split_whitespace()
            .map(|t| t.parse::<u16>().map_err(|_| pgm_err(format!("invalid sample `{t}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != n {
            return Err(pgm_err(format!("expected {n} samples, got {}", vals.len())));
        }
        vals
    };
    if let Some(p) = data.iter().position(|&v| v > maxval) {
        return Err(pgm_err(format!(
            "sample {} at ({}, {}) exceeds maxval {maxval}",
            data[p],
            p % width,
            p / width
        )));
    }
    Ok(GrayImage { width, height, maxval, data })
}

/// Binary `P5` PGM.
pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    for &v in &img.data {
        if img.maxval < 256 {
            out.push(v as u8);
        } else {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

/// Per-pixel disparity in pixels; non-positive means no estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub data: Vec<f64>,
}

impl DisparityMap {
    /// From a PGM: 8-bit samples are disparities in pixels, 16-bit samples
    /// are disparities times 256.
    pub fn from_pgm(img: &GrayImage) -> Self {
        let scale = if img.maxval > 255 { 1.0 / 256.0 } else { 1.0 };
        Self {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| v as f64 * scale).collect(),
        }
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }
}

fn pfm_err(reason: impl Into<String>) -> Error {
    Error::MalformedData { format: "pfm", reason: reason.into() }
}

/// Single-channel `Pf` PFM (rows stored bottom to top).
pub fn parse_pfm(bytes: &[u8]) -> Result<DisparityMap> {
    let (head, offset) = netpbm_header(bytes, 4).map_err(|_| pfm_err("truncated header"))?;
    if head[0] != "Pf" {
        return Err(pfm_err(format!("unsupported magic `{}`, expected greyscale `Pf`", head[0])));
    }
    let width: usize = head[1].parse().ok().filter(|&v| v > 0).ok_or_else(|| pfm_err("invalid width"))?;
    let height: usize = head[2].parse().ok().filter(|&v| v > 0).ok_or_else(|| pfm_err("invalid height"))?;
    let scale: f64 = head[3]
        .parse()
        .ok()
        .filter(|v: &f64| *v != 0.0 && v.is_finite())
        .ok_or_else(|| pfm_err("invalid scale"))?;
    let body = bytes.get(offset..).unwrap_or(&[]);
    if body.len() != 4 * width * height {
        return Err(pfm_err(format!("expected {} data bytes, got {}", 4 * width * height, body.len())));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0; width * height];
    for (i, c) in body.chunks(4).enumerate() {
        let raw = [c[0], c[1], c[2], c[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, col) = (height - 1 - i / width, i % width);
        data[row * width + col] = v as f64;
    }
    Ok(DisparityMap { width, height, data })
}

/// Little-endian `Pf` PFM.
pub fn write_pfm(d: &DisparityMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1\n", d.width, d.height).into_bytes();
    for row in (0..d.height).rev() {
        for col in 0..d.width {
            out.extend_from_slice(&(d.data[row * d.width + col] as f32).to_le_bytes());
        }
    }
    out
}

/// Foreground mask from a PGM (0 background, 255 foreground) and a disparity
/// side image of the same size. Every foreground pixel needs a positive
/// disparity.
pub fn mask_from_images(mask: &GrayImage, disparity: &DisparityMap) -> Result<ForegroundMask> {
    if mask.width != disparity.width || mask.height != disparity.height {
        return Err(Error::MalformedData {
            format: "mask",
            reason: format!(
                "mask is {}x{} but disparity is {}x{}",
                mask.width, mask.height, disparity.width, disparity.height
            ),
        });
    }
    let mut pixels = Vec::new();
    for v in 0..mask.height {
        for u in 0..mask.width {
            match mask.data[v * mask.width + u] {
                0 => {}
                255 => {
                    let d = disparity.at(u, v);
                    if !(d > 0.0 && d.is_finite()) {
                        return Err(Error::MalformedData {
                            format: "mask",
                            reason: format!("foreground pixel ({u}, {v}) has disparity {d}"),
                        });
                    }
                    pixels.push(MaskPixel { u: u as u32, v: v as u32, disparity: d });
                }
                other => {
                    return Err(Error::MalformedData {
                        format: "mask",
                        reason: format!("pixel ({u}, {v}) has value {other}, expected 0 or 255"),
                    })
                }
            }
        }
    }
    ForegroundMask::new(mask.width as u32, mask.height as u32, pixels)
}

/// Rasterizes a foreground mask into a mask PGM and a disparity PFM.
pub fn mask_to_images(mask: &ForegroundMask) -> (GrayImage, DisparityMap) {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut img = GrayImage { width: w, height: h, maxval: 255, data: vec![0; w * h] };
    let mut disp = DisparityMap { width: w, height: h, data: vec![0.0; w * h] };
    for p in mask.pixels() {
        let i = p.v as usize * w + p.u as usize;
        img.data[i] = 255;
        disp.data[i] = p.disparity;
    }
    (img, disp)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_g6).unwrap_or_else(|| "absent".into())
}

fn bin_label(lo: f64, hi: f64) -> String {
    format!("({},{}]", fmt_g6(lo), fmt_g6(hi))
}

/// Machine-readable report: one `key = value` per line, `absent` for
/// undefined values, configuration echoed under `config.`.
pub fn write_report_kv(r: &EvalReport) -> String {
    let cfg = &r.config;
    let mut out = String::new();
    for line in cfg.to_text().lines() {
        out.push_str("config.");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&format!("frames = {}\n", r.frames));
    for c in &r.categories {
        let d = c.difficulty.name();
        out.push_str(&format!("{d}.ap_2d@{} = {}\n", fmt_g6(cfg.iou_2d), fmt_g6(c.ap_2d)));
        out.push_str(&format!("{d}.ap_bev@{} = {}\n", fmt_g6(cfg.iou_bev), fmt_g6(c.ap_bev)));
        out.push_str(&format!("{d}.ap_3d@{} = {}\n", fmt_g6(cfg.iou_3d), fmt_g6(c.ap_3d)));
        out.push_str(&format!("{d}.aos@{} = {}\n", fmt_g6(cfg.iou_2d), fmt_g6(c.aos)));
        for (t, ap, apm) in &c.shape {
            if *t != cfg.iou_2d {
                out.push_str(&format!("{d}.ap_2d@{} = {}\n", fmt_g6(*t), fmt_g6(*ap)));
            }
            out.push_str(&format!("{d}.ap_mmd@{} = {}\n", fmt_g6(*t), opt(*apm)));
        }
    }
    let beta = fmt_g6(cfg.beta);
    match &r.mmdtp {
        None => out.push_str(&format!("mmdtp@{beta}.overall = absent\n")),
        Some(m) => {
            out.push_str(&format!("mmdtp@{beta}.overall = {}\n", opt(m.overall)));
            out.push_str(&format!("mmdtp@{beta}.count = {}\n", m.count));
            for b in &m.bins {
                let label = bin_label(b.lo, b.hi);
                out.push_str(&format!("mmdtp@{beta}.bin{label} = {}\n", opt(b.mean)));
                out.push_str(&format!("mmdtp@{beta}.bin{label}.count = {}\n", b.count));
            }
        }
    }
    out
}

/// Reads a key-value report back into a sorted map.
pub fn parse_report_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(" = ").ok_or_else(|| malformed(n + 1, "expected `key = value`"))?;
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(malformed(n + 1, format!("duplicate key `{k}`")));
        }
    }
    Ok(map)
}

/// Human-readable report laid out with one row per metric and one column
/// per difficulty.
pub fn write_report_table(r: &EvalReport) -> String {
    let cfg = &r.config;
    let mut out = String::new();
    out.push_str(&format!("# evaluation report, class {}, {} frames\n", cfg.class, r.frames));
    for line in cfg.to_text().lines() {
        out.push_str(&format!("# {line}\n"));
    }
    out.push('\n');
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let col = |f: &dyn Fn(usize) -> String| (0..r.categories.len()).map(f).collect::<Vec<_>>();
    rows.push((format!("AP_2D@{}", fmt_g6(cfg.iou_2d)), col(&|i| fmt_g6(r.categories[i].ap_2d))));
    rows.push((format!("AP_BEV@{}", fmt_g6(cfg.iou_bev)), col(&|i| fmt_g6(r.categories[i].ap_bev))));
    rows.push((format!("AP_3D@{}", fmt_g6(cfg.iou_3d)), col(&|i| fmt_g6(r.categories[i].ap_3d))));
    rows.push((format!("AOS@{}", fmt_g6(cfg.iou_2d)), col(&|i| fmt_g6(r.categories[i].aos))));
    for (k, &t) in cfg.ap_mmd_iou.iter().enumerate() {
        if t != cfg.iou_2d {
            rows.push((format!("AP_2D@{}", fmt_g6(t)), col(&|i| fmt_g6(r.categories[i].shape[k].1))));
        }
        rows.push((format!("AP_MMD@{}", fmt_g6(t)), col(&|i| opt(r.categories[i].shape[k].2))));
    }
    let header: Vec<String> = r.categories.iter().map(|c| c.difficulty.name().to_string()).collect();
    out.push_str(&format!("{:<14}", "metric"));
    for h in &header {
        out.push_str(&format!(" {h:>10}"));
    }
    out.push('\n');
    for (name, vals) in rows {
        out.push_str(&format!("{name:<14}"));
        for v in vals {
            out.push_str(&format!(" {v:>10}"));
        }
        out.push('\n');
    }
    out.push('\n');
    let beta = fmt_g6(cfg.beta);
    match &r.mmdtp {
        None => out.push_str(&format!("MMDTP@{beta}: absent (no shape clouds)\n")),
        Some(m) => {
            out.push_str(&format!("{:<14} {:>10} {:>6}\n", format!("MMDTP@{beta}"), "value", "TPs"));
            out.push_str(&format!("{:<14} {:>10} {:>6}\n", "overall", opt(m.overall), m.count));
            for b in &m.bins {
                out.push_str(&format!("{:<14} {:>10} {:>6}\n", bin_label(b.lo, b.hi), opt(b.mean), b.count));
            }
        }
    }
    out
}
