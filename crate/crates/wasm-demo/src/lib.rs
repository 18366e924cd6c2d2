//! Browser bindings for three interactive operations: sphere meshing at a
//! chosen grid resolution, rotated box overlap, and mirror completion of a
//! rendered partial view.

use stereo_shape::instance::mirror_hallucinate;
use stereo_shape::metrics::{bev_footprint, bev_intersection_area, iou_3d, iou_bev, CdNorm};
use stereo_shape::occupancy::{marching_cubes, AnalyticField, UniformGrid, DEFAULT_ISO};
use stereo_shape::synth::{frontal_partial, symmetric_library, ShapeTemplate};
use stereo_shape::{Box3D, Point3};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn flatten(points: &[Point3]) -> Vec<f32> {
    points.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect()
}

/// Extracted isosurface with summary statistics.
#[wasm_bindgen]
pub struct MeshView {
    positions: Vec<f32>,
    indices: Vec<u32>,
    area: f64,
    closed: bool,
    max_radius_error: f64,
}

#[wasm_bindgen]
impl MeshView {
    /// Vertex coordinates, `x y z` interleaved.
    #[wasm_bindgen(getter)]
    pub fn positions(&self) -> Vec<f32> {
        self.positions.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn indices(&self) -> Vec<u32> {
        self.indices.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn vertex_count(&self) -> usize {
        self.positions.len() / 3
    }

    #[wasm_bindgen(getter)]
    pub fn triangle_count(&self) -> usize {
        self.indices.len() / 3
    }

    #[wasm_bindgen(getter)]
    pub fn area(&self) -> f64 {
        self.area
    }

    #[wasm_bindgen(getter)]
    pub fn closed(&self) -> bool {
        self.closed
    }

    #[wasm_bindgen(getter)]
    pub fn max_radius_error(&self) -> f64 {
        self.max_radius_error
    }
}

/// Marching cubes on a sphere occupancy field over `[-0.5, 0.5]^3` with
/// `nodes` grid nodes per axis.
#[wasm_bindgen]
pub fn mesh_sphere(radius: f64, nodes: usize) -> Result<MeshView, JsError> {
    let field = AnalyticField::sphere(radius).map_err(js_err)?;
    let grid = UniformGrid::unit_cube(nodes).map_err(js_err)?;
    let mesh = marching_cubes(&field, &grid, DEFAULT_ISO);
    Ok(MeshView {
        positions: flatten(mesh.vertices()),
        indices: mesh.triangles().iter().flatten().map(|&i| i as u32).collect(),
        area: mesh.area(),
        closed: !mesh.is_empty() && mesh.is_closed_manifold(),
        max_radius_error: mesh
            .vertices()
            .iter()
            .map(|v| (v.coords.norm() - radius).abs())
            .fold(0.0, f64::max),
    })
}

/// Overlap of two boxes given as `[x, y, z, h, w, l, yaw]`.
#[wasm_bindgen]
pub struct Overlap {
    iou_bev: f64,
    iou_3d: f64,
    intersection: f64,
    footprints: Vec<f64>,
}

#[wasm_bindgen]
impl Overlap {
    #[wasm_bindgen(getter)]
    pub fn iou_bev(&self) -> f64 {
        self.iou_bev
    }

    #[wasm_bindgen(getter)]
    pub fn iou_3d(&self) -> f64 {
        self.iou_3d
    }

    /// Ground-plane intersection area.
    #[wasm_bindgen(getter)]
    pub fn intersection(&self) -> f64 {
        self.intersection
    }

    /// Both footprints, four `(x, z)` corners each.
    #[wasm_bindgen(getter)]
    pub fn footprints(&self) -> Vec<f64> {
        self.footprints.clone()
    }
}

fn parse_box(v: &[f64]) -> Result<Box3D, JsError> {
    if v.len() != 7 {
        return Err(JsError::new("a box is [x, y, z, h, w, l, yaw]"));
    }
    Box3D::new(Point3::new(v[0], v[1], v[2]), v[3], v[4], v[5], v[6]).map_err(js_err)
}

#[wasm_bindgen]
pub fn box_overlap(a: &[f64], b: &[f64]) -> Result<Overlap, JsError> {
    let (a, b) = (parse_box(a)?, parse_box(b)?);
    let footprints = bev_footprint(&a)
        .iter()
        .chain(bev_footprint(&b).iter())
        .flat_map(|c| *c)
        .collect();
    Ok(Overlap {
        iou_bev: iou_bev(&a, &b),
        iou_3d: iou_3d(&a, &b),
        intersection: bev_intersection_area(&a, &b),
        footprints,
    })
}

/// Visible and completed object-frame clouds and their MMD.
#[wasm_bindgen]
pub struct Completion {
    partial: Vec<f32>,
    completed: Vec<f32>,
    mmd_partial: f64,
    mmd_completed: f64,
}

#[wasm_bindgen]
impl Completion {
    #[wasm_bindgen(getter)]
    pub fn partial(&self) -> Vec<f32> {
        self.partial.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn completed(&self) -> Vec<f32> {
        self.completed.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mmd_partial(&self) -> f64 {
        self.mmd_partial
    }

    #[wasm_bindgen(getter)]
    pub fn mmd_completed(&self) -> f64 {
        self.mmd_completed
    }
}

/// Renders `shape` (`sphere`, `box-shell` or `toy-car`) frontally at
/// `depth` metres and mirror-completes it to `points` points.
#[wasm_bindgen]
pub fn complete_view(shape: &str, depth: f64, points: usize) -> Result<Completion, JsError> {
    let shape: ShapeTemplate = shape.parse().map_err(js_err)?;
    let partial = frontal_partial(shape, depth).map_err(js_err)?;
    let completed = mirror_hallucinate(&partial, points).map_err(js_err)?;
    let lib = symmetric_library(1024, 0).map_err(js_err)?;
    Ok(Completion {
        partial: flatten(partial.points()),
        completed: flatten(completed.points()),
        mmd_partial: lib.mmd(partial.points(), CdNorm::L2).map_err(js_err)?,
        mmd_completed: lib.mmd(completed.points(), CdNorm::L2).map_err(js_err)?,
    })
}
