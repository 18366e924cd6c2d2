//! Occupancy fields, grid queries and marching-cubes surface extraction.
//!
//! A field maps an object-frame point to the confidence that it lies inside
//! the object; the surface is its 0.5 level set. Fields can be queried on
//! arbitrary point sets, and meshes can be extracted at any resolution,
//! including different resolutions for different parts of the object.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point3, Vec3};
use crate::mc_table::TRI_TABLE;
use crate::voxel::Tensor;

pub const DEFAULT_ISO: f64 = 0.5;
/// Default soft-boundary width of analytic fields.
pub const DEFAULT_WIDTH: f64 = 0.05;

/// Scalar confidence field over object-frame space, values in `[0, 1]`.
pub trait OccupancyField: Sync {
    fn query(&self, g: &Point3) -> f64;

    /// Central-difference gradient.
    fn gradient(&self, g: &Point3) -> Vec3 {
        let h = 1e-5;
        let mut out = Vec3::zeros();
        for a in 0..3 {
            let mut lo = *g;
            let mut hi = *g;
            lo[a] -= h;
            hi[a] += h;
            out[a] = (self.query(&hi) - self.query(&lo)) / (2.0 * h);
        }
        out
    }
}

impl<F: OccupancyField + ?Sized> OccupancyField for &F {
    fn query(&self, g: &Point3) -> f64 {
        (**self).query(g)
    }

    fn gradient(&self, g: &Point3) -> Vec3 {
        (**self).gradient(g)
    }
}

/// Field with the same value everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantField(pub f64);

impl OccupancyField for ConstantField {
    fn query(&self, _g: &Point3) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticShape {
    Sphere { center: Point3, radius: f64 },
    AxisBox { center: Point3, half: Vec3 },
    /// `(|x/a|^p + |y/b|^p + |z/c|^p)^(1/p) = 1`.
    Superellipsoid { center: Point3, radii: Vec3, exponent: f64 },
}

impl AnalyticShape {
    /// Signed distance, exact for spheres and boxes and a radius-scaled
    /// approximation for superellipsoids. Negative inside.
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        match *self {
            AnalyticShape::Sphere { center, radius } => (p - center).norm() - radius,
            AnalyticShape::AxisBox { center, half } => {
                let q = (p - center).abs() - half;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            AnalyticShape::Superellipsoid { center, radii, exponent } => {
                let d = p - center;
                let s = (0..3).map(|a| (d[a] / radii[a]).abs().powf(exponent)).sum::<f64>();
                (s.powf(1.0 / exponent) - 1.0) * radii.min()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AnalyticShape::Sphere { radius, .. } => radius > 0.0,
            AnalyticShape::AxisBox { half, .. } => half.min() > 0.0,
            AnalyticShape::Superellipsoid { radii, exponent, .. } => radii.min() > 0.0 && exponent >= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid analytic shape parameters: {self:?}")))
        }
    }
}

/// Closed-form test field `1 / (1 + exp(sd / width))`: above 0.5 strictly
/// inside, below strictly outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticField {
    shape: AnalyticShape,
    width: f64,
}

impl AnalyticField {
    pub fn new(shape: AnalyticShape, width: f64) -> Result<Self> {
        shape.validate()?;
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Config(format!("field width must be positive, got {width}")));
        }
        Ok(Self { shape, width })
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        Self::new(AnalyticShape::Sphere { center: Point3::origin(), radius }, DEFAULT_WIDTH)
    }

    pub fn axis_box(half: Vec3) -> Result<Self> {
        Self::new(AnalyticShape::AxisBox { center: Point3::origin(), half }, DEFAULT_WIDTH)
    }

    pub fn shape(&self) -> &AnalyticShape {
        &self.shape
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Parses `kind key=value ...`, e.g. `sphere radius=0.4`,
    /// `box half=0.3,0.2,0.1 center=0,0,0`, or
    /// `superellipsoid radii=0.4,0.3,0.3 exponent=4 width=0.02`.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let mut tokens = spec.split_whitespace();
        let kind = tokens.next().ok_or_else(|| Error::Config("empty field spec".into()))?;
        if !["sphere", "box", "superellipsoid"].contains(&kind) {
            return Err(Error::UnknownShape(kind.to_string()));
        }
        let mut center = Point3::origin();
        let mut width = DEFAULT_WIDTH;
        let mut radius = None;
        let mut triple = None;
        let mut exponent = 2.0;
        let num = |k: &str, v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Config(format!("field spec `{k}`: invalid number `{v}`")))
        };
        let vec3 = |k: &str, v: &str| -> Result<Vec3> {
            let parts: Vec<f64> = v.split(',').map(|t| num(k, t)).collect::<Result<_>>()?;
            match parts[..] {
                [x, y, z] => Ok(Vec3::new(x, y, z)),
                _ => Err(Error::Config(format!("field spec `{k}` needs 3 comma-separated values"))),
            }
        };
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("field spec: expected key=value, got `{tok}`")))?;
            match (kind, k) {
                (_, "center") => center = Point3::from(vec3(k, v)?),
                (_, "width") => width = num(k, v)?,
                ("sphere", "radius") => radius = Some(num(k, v)?),
                ("box", "half") | ("superellipsoid", "radii") => triple = Some(vec3(k, v)?),
                ("superellipsoid", "exponent") => exponent = num(k, v)?,
                _ => return Err(Error::Config(format!("field spec: unknown key `{k}` for `{kind}`"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("field spec `{kind}` requires `{k}`"));
        let shape = match kind {
            "sphere" => AnalyticShape::Sphere { center, radius: radius.ok_or_else(|| missing("radius"))? },
            "box" => AnalyticShape::AxisBox { center, half: triple.ok_or_else(|| missing("half"))? },
            "superellipsoid" => AnalyticShape::Superellipsoid {
                center,
                radii: triple.ok_or_else(|| missing("radii"))?,
                exponent,
            },
            _ => unreachable!("kind checked above"),
        };
        Self::new(shape, width)
    }
}

impl OccupancyField for AnalyticField {
    fn query(&self, g: &Point3) -> f64 {
        let t = self.shape.signed_distance(g) / self.width;
        1.0 / (1.0 + t.exp())
    }
}

/// Confidences on a regular lattice, trilinearly interpolated and zero
/// outside the lattice bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedField {
    dims: [usize; 3],
    min: Point3,
    max: Point3,
    values: Vec<f64>,
}

impl TabulatedField {
    /// `values` is row-major over `dims = [nx, ny, nz]` (z fastest).
    pub fn new(dims: [usize; 3], min: Point3, max: Point3, values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidGrid(format!("lattice needs >= 2 nodes per axis, got {dims:?}")));
        }
        if (0..3).any(|a| !(max[a] > min[a])) {
            return Err(Error::InvalidGrid("lattice bounds must satisfy min < max".into()));
        }
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidGrid(format!(
                "lattice {dims:?} needs {} values, got {}",
                dims.iter().product::<usize>(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidGrid(format!("lattice value {v} outside [0, 1]")));
        }
        Ok(Self { dims, min, max, values })
    }

    /// Loads a 3-d flat tensor spanning `[-0.5, 0.5]^3`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims: [usize; 3] = t.dims.as_slice().try_into().map_err(|_| Error::MalformedData {
            format: "tensor",
            reason: format!("tabulated field needs 3 dims, got {}", t.dims.len()),
        })?;
        Self::new(
            dims,
            Point3::new(-0.5, -0.5, -0.5),
            Point3::new(0.5, 0.5, 0.5),
            t.data.iter().map(|&v| v as f64).collect(),
        )
    }

    /// Tabulates any field on a uniform grid.
    pub fn sample(field: &dyn OccupancyField, grid: &UniformGrid) -> Result<Self> {
        let [nx, ny, nz] = grid.nodes();
        let values = (0..nx * ny * nz)
            .into_par_iter()
            .map(|id| {
                let (i, j, k) = (id / (ny * nz), (id / nz) % ny, id % nz);
                field.query(&grid.node(i, j, k)).clamp(0.0, 1.0)
            })
            .collect();
        Self::new(grid.nodes(), grid.min(), grid.max(), values)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Point3 {
        let idx = [i, j, k];
        Point3::from(Vec3::from_fn(|a, _| {
            self.min[a] + (self.max[a] - self.min[a]) * (idx[a] as f64 / (self.dims[a] - 1) as f64)
        }))
    }
}

impl OccupancyField for TabulatedField {
    fn query(&self, g: &Point3) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            if !(g[a] >= self.min[a] && g[a] <= self.max[a]) {
                return 0.0;
            }
            let t = (g[a] - self.min[a]) / (self.max[a] - self.min[a]) * (self.dims[a] - 1) as f64;
            let i = (t.floor() as usize).min(self.dims[a] - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut out = 0.0;
        for c in 0..8 {
            let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if o[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                out += w * self.value(base[0] + o[0], base[1] + o[1], base[2] + o[2]);
            }
        }
        out
    }
}

/// Explicit, not necessarily uniform, list of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    points: Vec<Point3>,
}

impl SampleGrid {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("sample grid needs at least one point".into()));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidGrid("sample grid points must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Field values at every grid point, in grid order.
pub fn query_field(field: &dyn OccupancyField, grid: &SampleGrid) -> Vec<f64> {
    grid.points.par_iter().map(|g| field.query(g)).collect()
}

/// Axis-aligned lattice of `nodes[a]` evenly spaced nodes per axis, both
/// bounds included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    min: Point3,
    max: Point3,
    nodes: [usize; 3],
}

impl UniformGrid {
    pub fn new(min: Point3, max: Point3, nodes: [usize; 3]) -> Result<Self> {
        if nodes.iter().any(|&n| n < 2) {
            return Err(Error::InvalidGrid(format!("grid needs >= 2 nodes per axis, got {nodes:?}")));
        }
        if (0..3).any(|a| !(max[a] > min[a]) || !min[a].is_finite() || !max[a].is_finite()) {
            return Err(Error::InvalidGrid("grid bounds must be finite with min < max".into()));
        }
        Ok(Self { min, max, nodes })
    }

    /// `n` nodes per axis over `[-0.5, 0.5]^3`.
    pub fn unit_cube(n: usize) -> Result<Self> {
        Self::new(Point3::new(-0.5, -0.5, -0.5), Point3::new(0.5, 0.5, 0.5), [n; 3])
    }

    pub fn min(&self) -> Point3 {
        self.min
    }

    pub fn max(&self) -> Point3 {
        self.max
    }

    pub fn nodes(&self) -> [usize; 3] {
        self.nodes
    }

    pub fn cell_size(&self) -> Vec3 {
        Vec3::from_fn(|a, _| (self.max[a] - self.min[a]) / (self.nodes[a] - 1) as f64)
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_size().norm()
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Point3 {
        let idx = [i, j, k];
        Point3::from(Vec3::from_fn(|a, _| {
            self.min[a] + (self.max[a] - self.min[a]) * (idx[a] as f64 / (self.nodes[a] - 1) as f64)
        }))
    }
}

/// Indexed triangle mesh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[usize; 3]>,
}

fn triangle_cross(a: &Point3, b: &Point3, c: &Point3) -> Vec3 {
    (b - a).cross(&(c - a))
}

impl TriangleMesh {
    /// Validates indices and rejects zero-area triangles.
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (n, t) in triangles.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {n} references vertex {bad} of {}",
                    vertices.len()
                )));
            }
            if triangle_cross(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]).norm() == 0.0 {
                return Err(Error::InvalidMesh(format!("triangle {n} has zero area")));
            }
        }
        Ok(Self { vertices, triangles })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_points(&self, t: usize) -> [Point3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    pub fn centroid(&self, t: usize) -> Point3 {
        let [a, b, c] = self.triangle_points(t);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    /// Unit normal following the winding `(b - a) x (c - a)`.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle_points(t);
        triangle_cross(&a, &b, &c).normalize()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle_points(t);
                0.5 * triangle_cross(&a, &b, &c).norm()
            })
            .sum()
    }

    /// Axis-aligned bounds of the referenced vertices.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let mut it = self.triangles.iter().flatten().map(|&i| self.vertices[i]);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p))))
    }

    /// Whether every undirected edge is shared by exactly two triangles that
    /// traverse it in opposite directions.
    pub fn is_closed_manifold(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut directed: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .collect();
        directed.sort_unstable();
        if directed.windows(2).any(|w| w[0] == w[1]) {
            return false;
        }
        let mut undirected: Vec<(usize, usize)> = directed.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        undirected.sort_unstable();
        let mut i = 0;
        while i < undirected.len() {
            let mut j = i;
            while j < undirected.len() && undirected[j] == undirected[i] {
                j += 1;
            }
            if j - i != 2 {
                return false;
            }
            i = j;
        }
        true
    }

    /// Concatenates meshes without merging shared vertices.
    pub fn concat(parts: &[TriangleMesh]) -> TriangleMesh {
        let mut out = TriangleMesh::default();
        for m in parts {
            let off = out.vertices.len();
            out.vertices.extend_from_slice(&m.vertices);
            out.triangles.extend(m.triangles.iter().map(|t| t.map(|i| i + off)));
        }
        out
    }
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGE_CORNERS: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Classic 256-case marching cubes on the `iso` level set. Vertices are
/// shared between neighbouring cells and numbered in lattice-edge order, so
/// the output does not depend on thread scheduling. Triangles are wound so
/// their normals point towards lower field values.
pub fn marching_cubes(field: &dyn OccupancyField, grid: &UniformGrid, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.nodes();
    let node_id = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let n_nodes = nx * ny * nz;
    let values: Vec<f64> = (0..n_nodes)
        .into_par_iter()
        .map(|id| field.query(&grid.node(id % nx, (id / nx) % ny, id / (nx * ny))))
        .collect();

    // Edge `3 * node + axis` runs from `node` one step along `axis`.
    let crossings: Vec<Option<Point3>> = (0..3 * n_nodes)
        .into_par_iter()
        .map(|e| {
            let (id, axis) = (e / 3, e % 3);
            let mut idx = [id % nx, (id / nx) % ny, id / (nx * ny)];
            let p0 = grid.node(idx[0], idx[1], idx[2]);
            idx[axis] += 1;
            if idx[axis] >= grid.nodes()[axis] {
                return None;
            }
            let other = node_id(idx[0], idx[1], idx[2]);
            let (v0, v1) = (values[id], values[other]);
            if (v0 < iso) == (v1 < iso) {
                return None;
            }
            let p1 = grid.node(idx[0], idx[1], idx[2]);
            let t = (iso - v0) / (v1 - v0);
            Some(p0 + (p1 - p0) * t)
        })
        .collect();

    let mut edge_vertex = vec![usize::MAX; crossings.len()];
    let mut vertices = Vec::new();
    for (e, p) in crossings.iter().enumerate() {
        if let Some(p) = p {
            edge_vertex[e] = vertices.len();
            vertices.push(*p);
        }
    }

    let (cx, cy, cz) = (nx - 1, ny - 1, nz - 1);
    let per_cell: Vec<Vec<[usize; 3]>> = (0..cx * cy * cz)
        .into_par_iter()
        .map(|c| {
            let base = [c % cx, (c / cx) % cy, c / (cx * cy)];
            let mut case = 0usize;
            for (n, o) in CORNERS.iter().enumerate() {
                if values[node_id(base[0] + o[0], base[1] + o[1], base[2] + o[2])] < iso {
                    case |= 1 << n;
                }
            }
            let row = &TRI_TABLE[case];
            let mut tris = Vec::new();
            let edge_vertex_of = |edge: i8| {
                let [a, b] = EDGE_CORNERS[edge as usize];
                let (oa, ob) = (CORNERS[a], CORNERS[b]);
                let axis = (0..3).find(|&x| oa[x] != ob[x]).expect("cube edge");
                let lo = [0, 1, 2].map(|x| base[x] + oa[x].min(ob[x]));
                edge_vertex[3 * node_id(lo[0], lo[1], lo[2]) + axis]
            };
            for t in row.chunks(3).take_while(|t| t[0] >= 0) {
                let tri = [edge_vertex_of(t[0]), edge_vertex_of(t[1]), edge_vertex_of(t[2])];
                if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                    continue;
                }
                if triangle_cross(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]).norm() == 0.0 {
                    continue;
                }
                tris.push(tri);
            }
            tris
        })
        .collect();

    let triangles: Vec<[usize; 3]> = per_cell.into_iter().flatten().collect();
    compact(vertices, triangles)
}

/// Drops vertices no triangle references, keeping the original order.
fn compact(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> TriangleMesh {
    let mut used = vec![false; vertices.len()];
    for t in &triangles {
        for &i in t {
            used[i] = true;
        }
    }
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::new();
    for (i, p) in vertices.into_iter().enumerate() {
        if used[i] {
            remap[i] = kept.len();
            kept.push(p);
        }
    }
    TriangleMesh {
        vertices: kept,
        triangles: triangles.into_iter().map(|t| t.map(|i| remap[i])).collect(),
    }
}

/// Meshes of a mixed-resolution extraction, one per region.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedMesh {
    pub regions: Vec<TriangleMesh>,
    pub split_axis: Option<usize>,
}

impl MixedMesh {
    pub fn merged(&self) -> TriangleMesh {
        TriangleMesh::concat(&self.regions)
    }
}

/// Extracts each region at its own resolution. The regions must tile a box
/// along a single axis: equal bounds on the other two axes and consecutive
/// regions touching exactly. Seams between regions are not welded.
pub fn mixed_resolution_extract(field: &dyn OccupancyField, regions: &[UniformGrid], iso: f64) -> Result<MixedMesh> {
    if regions.is_empty() {
        return Err(Error::InvalidPartition("no regions given".into()));
    }
    let mut split_axis = None;
    if regions.len() > 1 {
        let first = &regions[0];
        let differing: Vec<usize> = (0..3)
            .filter(|&a| regions.iter().any(|r| r.min[a] != first.min[a] || r.max[a] != first.max[a]))
            .collect();
        let axis = match differing[..] {
            [a] => a,
            _ => {
                return Err(Error::InvalidPartition(format!(
                    "regions must differ along exactly one axis, they differ along {differing:?}"
                )))
            }
        };
        for (n, w) in regions.windows(2).enumerate() {
            if w[0].max[axis] != w[1].min[axis] {
                return Err(Error::InvalidPartition(format!(
                    "region {n} ends at {} but region {} starts at {}",
                    w[0].max[axis],
                    n + 1,
                    w[1].min[axis]
                )));
            }
        }
        split_axis = Some(axis);
    }
    Ok(MixedMesh {
        regions: regions.par_iter().map(|g| marching_cubes(field, g, iso)).collect(),
        split_axis,
    })
}

/// Per-triangle unit normals, flipped where needed so each points towards
/// decreasing occupancy at the triangle centroid.
pub fn estimate_normals(mesh: &TriangleMesh, field: &dyn OccupancyField) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    Ok((0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let n = mesh.face_normal(t);
            if n.dot(&field.gradient(&mesh.centroid(t))) > 0.0 {
                -n
            } else {
                n
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn query_examples() {
        let f = AnalyticField::sphere(0.5).unwrap();
        let grid = SampleGrid::new(vec![Point3::origin(), Point3::new(2.0, 0.0, 0.0)]).unwrap();
        let v = query_field(&f, &grid);
        assert!(v[0] > 0.5);
        assert!(v[1] < 0.5);
        assert!(SampleGrid::new(vec![]).is_err());

        let t = TabulatedField::new(
            [2, 3, 2],
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 2.0, 1.0),
            (0..12).map(|i| i as f64 / 11.0).collect(),
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..2 {
                    assert_eq!(t.query(&t.node(i, j, k)), t.value(i, j, k));
                }
            }
        }
        assert_eq!(t.query(&Point3::new(-0.1, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn tabulated_matches_linear_field() {
        // Trilinear interpolation reproduces any affine function exactly.
        let g = UniformGrid::new(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0), [5, 4, 3]).unwrap();
        let lin = |p: &Point3| 0.5 + 0.1 * p.x - 0.2 * p.y + 0.15 * p.z;
        struct Lin<F>(F);
        impl<F: Fn(&Point3) -> f64 + Sync> OccupancyField for Lin<F> {
            fn query(&self, g: &Point3) -> f64 {
                (self.0)(g)
            }
        }
        let t = TabulatedField::sample(&Lin(lin), &g).unwrap();
        for p in [Point3::new(0.3, -0.7, 0.1), Point3::new(-0.99, 0.99, 0.5), Point3::new(1.0, 1.0, 1.0)] {
            assert_abs_diff_eq!(t.query(&p), lin(&p), epsilon = 1e-12);
        }
    }

    #[test]
    fn field_values_bounded_and_signed() {
        let shapes = [
            AnalyticField::sphere(0.3).unwrap(),
            AnalyticField::axis_box(Vec3::new(0.3, 0.2, 0.1)).unwrap(),
            AnalyticField::parse_spec("superellipsoid radii=0.4,0.3,0.2 exponent=4").unwrap(),
        ];
        for f in &shapes {
            assert!(f.query(&Point3::origin()) > 0.5);
            assert!(f.query(&Point3::new(0.45, 0.0, 0.0)) < 0.5);
            for p in [Point3::new(10.0, 10.0, 10.0), Point3::new(0.0, 0.01, 0.0)] {
                let v = f.query(&p);
                assert!((0.0..=1.0).contains(&v));
            }
        }
        assert!(matches!(AnalyticField::parse_spec("torus r=1"), Err(Error::UnknownShape(_))));
        assert!(AnalyticField::parse_spec("sphere").unwrap_err().is_config());
        assert!(AnalyticField::parse_spec("sphere radius=-1").unwrap_err().is_config());
    }

    #[test]
    fn constant_field_gives_empty_mesh() {
        let g = UniformGrid::unit_cube(8).unwrap();
        assert!(marching_cubes(&ConstantField(0.0), &g, DEFAULT_ISO).is_empty());
        assert!(mixed_resolution_extract(&ConstantField(0.0), &[g], DEFAULT_ISO).unwrap().merged().is_empty());
        assert!(matches!(
            estimate_normals(&TriangleMesh::empty(), &ConstantField(0.0)),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn sphere_mesh_quality() {
        let r = 0.4;
        let f = AnalyticField::sphere(r).unwrap();
        let g = UniformGrid::unit_cube(32).unwrap();
        let m = marching_cubes(&f, &g, DEFAULT_ISO);
        assert!(m.is_closed_manifold());
        let tol = 1.5 * g.cell_diagonal();
        for v in m.vertices() {
            assert!((v.coords.norm() - r).abs() <= tol);
        }
        let exact = 4.0 * PI * r * r;
        assert!((m.area() - exact).abs() / exact < 0.1, "area {}", m.area());
        for v in m.vertices() {
            assert_abs_diff_eq!(f.query(v), DEFAULT_ISO, epsilon = 0.05);
        }
    }

    #[test]
    fn winding_points_outward_and_normals_radial() {
        let f = AnalyticField::sphere(0.4).unwrap();
        let m = marching_cubes(&f, &UniformGrid::unit_cube(24).unwrap(), DEFAULT_ISO);
        for t in 0..m.triangles().len() {
            let c = m.centroid(t).coords.normalize();
            assert!(m.face_normal(t).dot(&c) > 0.0);
        }
        let normals = estimate_normals(&m, &f).unwrap();
        let cos10 = (10f64).to_radians().cos();
        for (t, n) in normals.iter().enumerate() {
            assert_abs_diff_eq!(n.norm(), 1.0, epsilon = 1e-12);
            assert!(n.dot(&m.centroid(t).coords.normalize()) > cos10);
        }
    }

    #[test]
    fn box_mesh_bounds_and_face_normals() {
        let half = Vec3::new(0.3, 0.2, 0.15);
        let f = AnalyticField::axis_box(half).unwrap();
        let g = UniformGrid::unit_cube(41).unwrap();
        let m = marching_cubes(&f, &g, DEFAULT_ISO);
        let (lo, hi) = m.bounds().unwrap();
        let cell = g.cell_size();
        for a in 0..3 {
            assert!((hi[a] - half[a]).abs() <= cell[a]);
            assert!((lo[a] + half[a]).abs() <= cell[a]);
        }
        let normals = estimate_normals(&m, &f).unwrap();
        let mut checked = 0;
        for (t, n) in normals.iter().enumerate() {
            let c = m.centroid(t);
            // Face interior of the +x face, at least two cells from its border.
            if c.x > 0.0 && c.y.abs() < half.y - 2.0 * cell.y && c.z.abs() < half.z - 2.0 * cell.z {
                assert!((n - Vec3::x()).norm() < 1e-6, "{n:?}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn single_triangle_normal_follows_gradient() {
        let m = TriangleMesh::new(
            vec![Point3::new(0.0, 0.0, 0.5), Point3::new(0.1, 0.0, 0.5), Point3::new(0.0, 0.1, 0.5)],
            vec![[0, 2, 1]],
        )
        .unwrap();
        let f = AnalyticField::sphere(0.5).unwrap();
        let n = estimate_normals(&m, &f).unwrap()[0];
        assert_abs_diff_eq!(n, Vec3::z(), epsilon = 1e-12);
        assert!(TriangleMesh::new(vec![Point3::origin(); 3], vec![[0, 1, 2]]).is_err());
        assert!(TriangleMesh::new(vec![Point3::origin()], vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn mixed_resolution_examples() {
        let f = AnalyticField::sphere(0.4).unwrap();
        let whole = UniformGrid::unit_cube(33).unwrap();
        let lo = UniformGrid::new(Point3::new(-0.5, -0.5, -0.5), Point3::new(0.5, 0.5, 0.0), [33, 33, 17]).unwrap();
        let hi = UniformGrid::new(Point3::new(-0.5, -0.5, 0.0), Point3::new(0.5, 0.5, 0.5), [33, 33, 17]).unwrap();
        let mixed = mixed_resolution_extract(&f, &[lo, hi], DEFAULT_ISO).unwrap();
        assert_eq!(mixed.split_axis, Some(2));
        let single = marching_cubes(&f, &whole, DEFAULT_ISO);
        assert_eq!(mixed.merged().triangles().len(), single.triangles().len());

        let coarse = UniformGrid::new(Point3::new(-0.5, -0.5, -0.5), Point3::new(0.5, 0.5, 0.0), [8, 8, 8]).unwrap();
        let mixed = mixed_resolution_extract(&f, &[coarse, hi], DEFAULT_ISO).unwrap();
        assert!(mixed.regions[0].triangles().len() < mixed.regions[1].triangles().len());

        let gap = UniformGrid::new(Point3::new(-0.5, -0.5, 0.1), Point3::new(0.5, 0.5, 0.5), [8, 8, 8]).unwrap();
        assert!(matches!(
            mixed_resolution_extract(&f, &[coarse, gap], DEFAULT_ISO),
            Err(Error::InvalidPartition(_))
        ));
        let skew = UniformGrid::new(Point3::new(-0.4, -0.5, 0.0), Point3::new(0.5, 0.5, 0.5), [8, 8, 8]).unwrap();
        assert!(matches!(
            mixed_resolution_extract(&f, &[coarse, skew], DEFAULT_ISO),
            Err(Error::InvalidPartition(_))
        ));
        assert!(mixed_resolution_extract(&f, &[], DEFAULT_ISO).is_err());
    }

    #[test]
    fn extraction_is_deterministic() {
        let f = AnalyticField::parse_spec("superellipsoid radii=0.4,0.25,0.3 exponent=3").unwrap();
        let g = UniformGrid::unit_cube(20).unwrap();
        let a = marching_cubes(&f, &g, DEFAULT_ISO);
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| marching_cubes(&f, &g, DEFAULT_ISO));
        assert_eq!(a, b);
        assert!(a.is_closed_manifold());
    }

    proptest! {
        #[test]
        fn query_order_independent(pts in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..40)) {
            let f = AnalyticField::sphere(0.45).unwrap();
            let pts: Vec<Point3> = pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
            let fwd = query_field(&f, &SampleGrid::new(pts.clone()).unwrap());
            let mut rev_pts = pts.clone();
            rev_pts.reverse();
            let mut rev = query_field(&f, &SampleGrid::new(rev_pts).unwrap());
            rev.reverse();
            prop_assert_eq!(fwd, rev);
        }
    }
}
