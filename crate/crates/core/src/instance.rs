//! Instance-level shape pipeline: visible-point extraction from a
//! foreground mask, normalization into the object coordinate system (OCS),
//! unseen-surface hallucination and shape encoding.
//!
//! OCS axes: x along the object length, y along its height (down), z along
//! its width. Points are scaled by `1 / l` on every axis by default.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, yaw_rotation, Pixel, Point3, StereoRig};

/// Number of visible points sampled per instance.
pub const DEFAULT_VISIBLE_POINTS: usize = 2048;
/// Cardinality of a completed instance cloud.
pub const DEFAULT_COMPLETE_POINTS: usize = 16384;

/// Coordinate frame a point cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Camera,
    Object,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Frame::Camera => "camera",
            Frame::Object => "object",
        }
    }
}

/// An ordered point set. Points flagged as padding are batching filler and
/// are skipped by every distance computation.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    frame: Frame,
    points: Vec<Point3>,
    padding: Vec<bool>,
}

impl PointCloud {
    pub fn new(frame: Frame, points: Vec<Point3>) -> Self {
        let padding = vec![false; points.len()];
        Self { frame, points, padding }
    }

    pub fn with_padding(frame: Frame, points: Vec<Point3>, padding: Vec<bool>) -> Self {
        assert_eq!(points.len(), padding.len(), "padding flags must match point count");
        Self { frame, points, padding }
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn is_padding(&self, i: usize) -> bool {
        self.padding[i]
    }

    pub fn padding_count(&self) -> usize {
        self.padding.iter().filter(|&&p| p).count()
    }

    /// Declared cardinality, padding included.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn real_points(&self) -> impl Iterator<Item = &Point3> + '_ {
        self.points.iter().zip(&self.padding).filter(|(_, &p)| !p).map(|(q, _)| q)
    }

    pub fn real_vec(&self) -> Vec<Point3> {
        self.real_points().copied().collect()
    }

    fn expect_frame(&self, expected: Frame) -> Result<()> {
        if self.frame != expected {
            return Err(Error::WrongFrame {
                expected: expected.name(),
                found: self.frame.name(),
            });
        }
        Ok(())
    }
}

/// 3D bounding box `(x, y, z, h, w, l, yaw)` in camera coordinates. The
/// center is the geometric center of the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: Point3,
    h: f64,
    w: f64,
    l: f64,
    yaw: f64,
    pub score: Option<f64>,
}

impl Box3D {
    pub fn new(center: Point3, h: f64, w: f64, l: f64, yaw: f64) -> Result<Self> {
        for (name, v) in [("height", h), ("width", w), ("length", l)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::DegenerateBox(format!("{name} must be positive, got {v}")));
            }
        }
        if !(center.coords.iter().all(|c| c.is_finite()) && yaw.is_finite()) {
            return Err(Error::DegenerateBox("center and yaw must be finite".into()));
        }
        Ok(Self {
            center,
            h,
            w,
            l,
            yaw: normalize_angle(yaw),
            score: None,
        })
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn volume(&self) -> f64 {
        self.h * self.w * self.l
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        yaw_rotation(self.yaw)
    }

    /// The eight corners, `center + R * (+-l/2, +-h/2, +-w/2)`.
    pub fn corners(&self) -> [Point3; 8] {
        let r = self.rotation();
        let mut out = [Point3::origin(); 8];
        for (n, c) in out.iter_mut().enumerate() {
            let sx = if n & 1 == 0 { -0.5 } else { 0.5 };
            let sy = if n & 2 == 0 { -0.5 } else { 0.5 };
            let sz = if n & 4 == 0 { -0.5 } else { 0.5 };
            *c = self.center + r * Vector3::new(sx * self.l, sy * self.h, sz * self.w);
        }
        out
    }

    pub fn translated(&self, t: Vector3<f64>) -> Self {
        Self {
            center: self.center + t,
            ..*self
        }
    }
}

/// How camera points are scaled into the object frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OcsScale {
    /// Every axis divided by the box length.
    #[default]
    UniformLength,
    /// Axes divided by `(l, h, w)` respectively.
    PerAxis,
}

impl OcsScale {
    fn factors(self, b: &Box3D) -> Vector3<f64> {
        match self {
            OcsScale::UniformLength => Vector3::new(b.l, b.l, b.l),
            OcsScale::PerAxis => Vector3::new(b.l, b.h, b.w),
        }
    }
}

impl std::str::FromStr for OcsScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-l" => Ok(OcsScale::UniformLength),
            "per-axis" => Ok(OcsScale::PerAxis),
            other => Err(Error::Config(format!(
                "ocs_scale must be `uniform-l` or `per-axis`, got `{other}`"
            ))),
        }
    }
}

/// Maps camera-frame points into the box's object frame. Padding points are
/// placed at the object origin.
pub fn ocs_transform(cloud: &PointCloud, b: &Box3D, scale: OcsScale) -> Result<PointCloud> {
    cloud.expect_frame(Frame::Camera)?;
    let rt = b.rotation().transpose();
    let s = scale.factors(b);
    let points = cloud
        .points
        .iter()
        .zip(&cloud.padding)
        .map(|(p, &pad)| {
            if pad {
                Point3::origin()
            } else {
                Point3::from((rt * (p - b.center)).component_div(&s))
            }
        })
        .collect();
    Ok(PointCloud::with_padding(Frame::Object, points, cloud.padding.clone()))
}

/// Places object-frame points back into the camera frame.
pub fn ocs_inverse(cloud: &PointCloud, b: &Box3D, scale: OcsScale) -> Result<PointCloud> {
    cloud.expect_frame(Frame::Object)?;
    let r = b.rotation();
    let s = scale.factors(b);
    let points = cloud
        .points
        .iter()
        .map(|p| b.center + r * p.coords.component_mul(&s))
        .collect();
    Ok(PointCloud::with_padding(Frame::Camera, points, cloud.padding.clone()))
}

/// A foreground pixel of an instance with its estimated disparity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPixel {
    pub u: u32,
    pub v: u32,
    pub disparity: f64,
}

/// Foreground pixels of one region of interest. Pixel coordinates are image
/// coordinates of the left view.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMask {
    width: u32,
    height: u32,
    pixels: Vec<MaskPixel>,
}

impl ForegroundMask {
    pub fn new(width: u32, height: u32, pixels: Vec<MaskPixel>) -> Result<Self> {
        for p in &pixels {
            if p.u >= width || p.v >= height {
                return Err(Error::MalformedData {
                    format: "mask",
                    reason: format!("pixel ({}, {}) outside {width}x{height}", p.u, p.v),
                });
            }
            if !(p.disparity > 0.0 && p.disparity.is_finite()) {
                return Err(Error::NonPositiveDisparity(p.disparity));
            }
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[MaskPixel] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// One slot of a fixed-size foreground sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampledPixel {
    Foreground(MaskPixel),
    Padding,
}

/// Draws exactly `e` slots: a uniform sample without replacement when the
/// mask has at least `e` pixels, otherwise every pixel followed by padding.
pub fn sample_foreground(mask: &ForegroundMask, e: usize, seed: u64) -> Result<Vec<SampledPixel>> {
    if e == 0 {
        return Err(Error::Config("sample size must be >= 1".into()));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = mask.len();
    if n <= e {
        let mut out: Vec<_> = mask.pixels.iter().copied().map(SampledPixel::Foreground).collect();
        out.resize(e, SampledPixel::Padding);
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, n, e)
        .into_iter()
        .map(|i| SampledPixel::Foreground(mask.pixels[i]))
        .collect())
}

/// Visible-surface extraction: samples `e` foreground pixels and
/// backprojects each at depth `f * B / disparity`. Padding slots become
/// flagged points at the camera origin.
pub fn extract_visible(mask: &ForegroundMask, rig: &StereoRig, e: usize, seed: u64) -> Result<PointCloud> {
    let sample = sample_foreground(mask, e, seed)?;
    let mut points = Vec::with_capacity(e);
    let mut padding = Vec::with_capacity(e);
    for s in sample {
        match s {
            SampledPixel::Foreground(m) => {
                let depth = rig.disparity_to_depth(m.disparity)?;
                points.push(rig.left().backproject(Pixel::new(m.u as f64, m.v as f64), depth)?);
                padding.push(false);
            }
            SampledPixel::Padding => {
                points.push(Point3::origin());
                padding.push(true);
            }
        }
    }
    Ok(PointCloud::with_padding(Frame::Camera, points, padding))
}

/// Farthest-point ordering of `points` starting from the max-norm point;
/// ties resolve to the lowest index.
fn fps_order(points: &[Point3], n: usize) -> Vec<usize> {
    let n = n.min(points.len());
    let mut order = Vec::with_capacity(n);
    if n == 0 {
        return order;
    }
    let mut start = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = p.coords.norm_squared();
        if d > best {
            best = d;
            start = i;
        }
    }
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut chosen = vec![false; points.len()];
    let mut current = start;
    for _ in 0..n {
        order.push(current);
        chosen[current] = true;
        let c = points[current];
        let mut next = None;
        let mut far = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > far {
                far = dist[i];
                next = Some(i);
            }
        }
        match next {
            Some(i) => current = i,
            None => break,
        }
    }
    order
}

/// Deterministic resampling to exactly `n` points: farthest-point
/// subsampling when shrinking, the full farthest-point ordering repeated
/// cyclically when growing.
pub fn resample_fps(points: &[Point3], n: usize) -> Result<Vec<Point3>> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let order = fps_order(points, n);
    Ok(order.iter().cycle().take(n).map(|&i| points[i]).collect())
}

/// Completes a partial object-frame cloud to a fixed cardinality.
pub trait Hallucinator {
    fn complete(&self, partial: &PointCloud, target: usize) -> Result<PointCloud>;
}

/// Lateral-symmetry completion: reflects the visible points across the
/// OCS `z = 0` plane and resamples the union.
#[derive(Debug, Clone, Copy, Default)]
pub struct MirrorHallucinator;

impl Hallucinator for MirrorHallucinator {
    fn complete(&self, partial: &PointCloud, target: usize) -> Result<PointCloud> {
        mirror_hallucinate(partial, target)
    }
}

/// `partial ∪ reflect_z(partial)` (padding excluded), resampled to `target`
/// points. The union keeps each original point followed by its mirror image.
pub fn mirror_union(partial: &PointCloud) -> Result<Vec<Point3>> {
    partial.expect_frame(Frame::Object)?;
    let union: Vec<Point3> = partial
        .real_points()
        .flat_map(|p| [*p, Point3::new(p.x, p.y, -p.z)])
        .collect();
    if union.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(union)
}

pub fn mirror_hallucinate(partial: &PointCloud, target: usize) -> Result<PointCloud> {
    let union = mirror_union(partial)?;
    Ok(PointCloud::new(Frame::Object, resample_fps(&union, target)?))
}

/// Opaque implicit shape descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCode(pub Vec<f64>);

impl ShapeCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Encodes a completed object-frame cloud into a shape code.
pub trait ShapeEncoder {
    fn encode(&self, complete: &PointCloud) -> ShapeCode;
}

/// Pass-through encoder: the code is the flattened completed cloud.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlattenEncoder;

impl ShapeEncoder for FlattenEncoder {
    fn encode(&self, complete: &PointCloud) -> ShapeCode {
        ShapeCode(complete.real_points().flat_map(|p| [p.x, p.y, p.z]).collect())
    }
}

/// Every intermediate of a single instance run.
#[derive(Debug, Clone)]
pub struct InstanceOutput {
    pub visible: PointCloud,
    pub normalized: PointCloud,
    pub completed: PointCloud,
    pub code: ShapeCode,
}

/// The composed per-instance pipeline: extraction, normalization,
/// hallucination, encoding.
pub struct InstancePipeline<H = MirrorHallucinator, E = FlattenEncoder> {
    pub rig: StereoRig,
    pub visible_points: usize,
    pub complete_points: usize,
    pub scale: OcsScale,
    pub seed: u64,
    pub hallucinator: H,
    pub encoder: E,
}

impl InstancePipeline {
    pub fn new(rig: StereoRig) -> Self {
        Self {
            rig,
            visible_points: DEFAULT_VISIBLE_POINTS,
            complete_points: DEFAULT_COMPLETE_POINTS,
            scale: OcsScale::default(),
            seed: 0,
            hallucinator: MirrorHallucinator,
            encoder: FlattenEncoder,
        }
    }
}

impl<H: Hallucinator, E: ShapeEncoder> InstancePipeline<H, E> {
    pub fn run(&self, mask: &ForegroundMask, b: &Box3D) -> Result<InstanceOutput> {
        let visible = extract_visible(mask, &self.rig, self.visible_points, self.seed)?;
        self.run_from_cloud(visible, b)
    }

    /// Runs from an already extracted camera-frame cloud.
    pub fn run_from_cloud(&self, visible: PointCloud, b: &Box3D) -> Result<InstanceOutput> {
        let normalized = ocs_transform(&visible, b, self.scale)?;
        let completed = self.hallucinator.complete(&normalized, self.complete_points)?;
        let code = self.encoder.encode(&completed);
        Ok(InstanceOutput {
            visible,
            normalized,
            completed,
            code,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rig100() -> StereoRig {
        StereoRig::new(CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap(), 0.5).unwrap()
    }

    fn bx(x: f64, y: f64, z: f64, h: f64, w: f64, l: f64, t: f64) -> Box3D {
        Box3D::new(Point3::new(x, y, z), h, w, l, t).unwrap()
    }

    /// The literal 4x4 object-to-camera matrix with rotation blocks scaled by l.
    fn ocs_matrix(b: &Box3D) -> Matrix4<f64> {
        let (s, c) = b.yaw().sin_cos();
        let l = b.l();
        Matrix4::new(
            c * l, 0.0, s * l, b.center.x,
            0.0, l, 0.0, b.center.y,
            -s * l, 0.0, c * l, b.center.z,
            0.0, 0.0, 0.0, 1.0,
        )
    }

    fn oracle_ocs(b: &Box3D, p: &Point3) -> Point3 {
        let inv = ocs_matrix(b).try_inverse().unwrap();
        let h = inv * p.to_homogeneous();
        Point3::new(h.x / h.w, h.y / h.w, h.z / h.w)
    }

    fn cam(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(Frame::Camera, points)
    }

    fn mask_of(pixels: &[(u32, u32, f64)]) -> ForegroundMask {
        ForegroundMask::new(
            100,
            100,
            pixels.iter().map(|&(u, v, disparity)| MaskPixel { u, v, disparity }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn sample_full_set() {
        let mask = mask_of(&[(1, 1, 2.0), (2, 1, 2.0), (3, 1, 2.0), (4, 1, 2.0)]);
        let s = sample_foreground(&mask, 4, 7).unwrap();
        let mut us: Vec<u32> = s
            .iter()
            .map(|x| match x {
                SampledPixel::Foreground(m) => m.u,
                SampledPixel::Padding => panic!("unexpected padding"),
            })
            .collect();
        us.sort();
        assert_eq!(us, vec![1, 2, 3, 4]);
    }

    #[test]
    fn sample_pads_small_masks() {
        let mask = mask_of(&[(1, 1, 2.0), (2, 1, 2.0)]);
        let s = sample_foreground(&mask, 4, 7).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.iter().filter(|x| matches!(x, SampledPixel::Padding)).count(), 2);
        let cloud = extract_visible(&mask, &rig100(), 4, 7).unwrap();
        assert_eq!(cloud.padding_count(), 2);
        assert_eq!(cloud.real_points().count(), 2);
        let b = bx(1.0, 2.0, 30.0, 1.5, 1.6, 4.0, 0.3);
        let ocs = ocs_transform(&cloud, &b, OcsScale::UniformLength).unwrap();
        assert!(ocs.points()[2] == Point3::origin() && ocs.points()[3] == Point3::origin());
    }

    #[test]
    fn sample_is_deterministic() {
        let pixels: Vec<_> = (0..10_000u32).map(|i| (i % 100, i / 100, 1.0 + (i % 7) as f64)).collect();
        let mask = mask_of(&pixels);
        let a = sample_foreground(&mask, 2048, 42).unwrap();
        let b = sample_foreground(&mask, 2048, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2048);
        let c = sample_foreground(&mask, 2048, 43).unwrap();
        assert_ne!(a, c);
        let mut ids: Vec<_> = a
            .iter()
            .map(|x| match x {
                SampledPixel::Foreground(m) => (m.u, m.v),
                SampledPixel::Padding => unreachable!(),
            })
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 2048, "sampling must be without replacement");
    }

    #[test]
    fn sample_errors() {
        let empty = ForegroundMask::new(10, 10, vec![]).unwrap();
        assert!(matches!(sample_foreground(&empty, 4, 0), Err(Error::EmptyMask)));
        assert!(ForegroundMask::new(10, 10, vec![MaskPixel { u: 10, v: 0, disparity: 1.0 }]).is_err());
        assert!(matches!(
            ForegroundMask::new(10, 10, vec![MaskPixel { u: 1, v: 0, disparity: 0.0 }]),
            Err(Error::NonPositiveDisparity(_))
        ));
    }

    #[test]
    fn extract_single_pixel() {
        let mask = mask_of(&[(50, 50, 10.0)]);
        let c = extract_visible(&mask, &rig100(), 1, 0).unwrap();
        assert_eq!(c.points(), &[Point3::new(0.0, 0.0, 5.0)]);
    }

    #[test]
    fn extract_fronto_parallel_plane() {
        let mask = mask_of(&[(10, 10, 4.0), (80, 12, 4.0), (15, 90, 4.0), (70, 70, 4.0)]);
        let c = extract_visible(&mask, &rig100(), 4, 0).unwrap();
        for p in c.points() {
            assert_abs_diff_eq!(p.z, 12.5, epsilon = 1e-12);
        }
        // Plane z = 12.5 fits all points exactly: residual of the plane through
        // the first three evaluated at the fourth.
        let p = c.points();
        let n = (p[1] - p[0]).cross(&(p[2] - p[0])).normalize();
        assert!((p[3] - p[0]).dot(&n).abs() < 1e-9);
    }

    #[test]
    fn ocs_examples() {
        let unit = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let pts = vec![Point3::new(0.3, -1.0, 2.0), Point3::new(5.0, 0.0, -4.0)];
        let out = ocs_transform(&cam(pts.clone()), &unit, OcsScale::UniformLength).unwrap();
        assert_eq!(out.points(), &pts[..]);

        let b = bx(2.0, 0.0, 10.0, 1.5, 1.6, 4.0, 0.0);
        let out = ocs_transform(&cam(vec![Point3::new(2.0, 0.0, 10.0)]), &b, OcsScale::UniformLength).unwrap();
        assert_eq!(out.points()[0], Point3::origin());

        let b = bx(0.0, 0.0, 0.0, 1.0, 1.0, 2.0, PI / 2.0);
        let p = Point3::new(1.0, 0.0, 0.0);
        let out = ocs_transform(&cam(vec![p]), &b, OcsScale::UniformLength).unwrap();
        assert_abs_diff_eq!(out.points()[0], oracle_ocs(&b, &p), epsilon = 1e-12);
        // R(pi/2)^T (1,0,0) = (0,0,1), scaled by 1/2.
        assert_abs_diff_eq!(out.points()[0], Point3::new(0.0, 0.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn ocs_round_trips() {
        let boxes = [
            bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0),
            bx(2.0, 0.0, 10.0, 1.5, 1.6, 4.0, 0.0),
            bx(0.0, 0.0, 0.0, 1.0, 1.0, 2.0, PI / 2.0),
        ];
        let pts = cam(vec![Point3::new(1.0, 0.0, 0.0), Point3::new(-3.0, 1.2, 17.5)]);
        for b in &boxes {
            for scale in [OcsScale::UniformLength, OcsScale::PerAxis] {
                let back = ocs_inverse(&ocs_transform(&pts, b, scale).unwrap(), b, scale).unwrap();
                for (a, c) in pts.points().iter().zip(back.points()) {
                    assert_abs_diff_eq!(a, c, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn ocs_rejects_wrong_frame() {
        let b = bx(0.0, 0.0, 5.0, 1.0, 1.0, 1.0, 0.0);
        let obj = PointCloud::new(Frame::Object, vec![Point3::origin()]);
        assert!(matches!(ocs_transform(&obj, &b, OcsScale::UniformLength), Err(Error::WrongFrame { .. })));
        assert!(matches!(ocs_inverse(&cam(vec![]), &b, OcsScale::UniformLength), Err(Error::WrongFrame { .. })));
        assert!(matches!(Box3D::new(Point3::origin(), 1.0, 1.0, 0.0, 0.0), Err(Error::DegenerateBox(_))));
    }

    #[test]
    fn per_axis_maps_box_to_unit_cube() {
        let b = bx(3.0, 1.0, 20.0, 1.5, 1.6, 4.0, 0.7);
        let out = ocs_transform(&cam(b.corners().to_vec()), &b, OcsScale::PerAxis).unwrap();
        for p in out.points() {
            for c in p.iter() {
                assert_abs_diff_eq!(c.abs(), 0.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mirror_examples() {
        let partial = PointCloud::new(Frame::Object, vec![Point3::new(0.3, 0.0, 0.2)]);
        let out = mirror_hallucinate(&partial, 2).unwrap();
        assert_eq!(out.points(), &[Point3::new(0.3, 0.0, 0.2), Point3::new(0.3, 0.0, -0.2)]);

        let sym = vec![
            Point3::new(0.1, 0.0, 0.3),
            Point3::new(0.1, 0.0, -0.3),
            Point3::new(-0.4, 0.1, 0.0),
            Point3::new(0.2, -0.1, 0.1),
            Point3::new(0.2, -0.1, -0.1),
        ];
        let out = mirror_hallucinate(&PointCloud::new(Frame::Object, sym.clone()), 7).unwrap();
        assert_eq!(out.len(), 7);
        assert!(out.points().iter().all(|p| sym.contains(p)));

        let pad = PointCloud::with_padding(Frame::Object, vec![Point3::origin()], vec![true]);
        assert!(matches!(mirror_hallucinate(&pad, 4), Err(Error::EmptyCloud)));
    }

    #[test]
    fn fps_examples() {
        let line = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        assert_eq!(resample_fps(&line, 2).unwrap(), vec![line[2], line[0]]);
        assert_eq!(resample_fps(&line, 1).unwrap(), vec![line[2]]);
        let mut perm = resample_fps(&line, 3).unwrap();
        perm.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap());
        assert_eq!(perm, line);
        let grown = resample_fps(&line, 7).unwrap();
        assert_eq!(grown.len(), 7);
        assert_eq!(grown[3], grown[0]);
        assert!(matches!(resample_fps(&[], 3), Err(Error::EmptyCloud)));
    }

    #[test]
    fn pipeline_runs() {
        let rig = rig100();
        let mask = mask_of(&[(40, 50, 10.0), (45, 50, 10.0), (50, 52, 10.0)]);
        let b = bx(0.0, 0.0, 5.0, 1.0, 1.0, 2.0, 0.0);
        let mut pipe = InstancePipeline::new(rig);
        pipe.visible_points = 8;
        pipe.complete_points = 16;
        let out = pipe.run(&mask, &b).unwrap();
        assert_eq!(out.visible.len(), 8);
        assert_eq!(out.visible.padding_count(), 5);
        assert_eq!(out.completed.len(), 16);
        assert_eq!(out.code.dim(), 48);
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (-20.0..20.0f64, -2.0..2.0f64, 2.0..60.0f64, 0.5..3.0f64, 0.5..3.0f64, 0.5..6.0f64, -PI..PI)
            .prop_map(|(x, y, z, h, w, l, t)| bx(x, y, z, h, w, l, t))
    }

    proptest! {
        #[test]
        fn ocs_inverse_identity(b in arb_box(), pts in prop::collection::vec((-30.0..30.0f64, -5.0..5.0f64, 0.0..70.0f64), 1..20)) {
            let c = cam(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect());
            let back = ocs_inverse(&ocs_transform(&c, &b, OcsScale::UniformLength).unwrap(), &b, OcsScale::UniformLength).unwrap();
            for (p, q) in c.points().iter().zip(back.points()) {
                prop_assert!((p - q).norm() < 1e-9);
            }
            for p in c.points() {
                let via = ocs_transform(&cam(vec![*p]), &b, OcsScale::UniformLength).unwrap().points()[0];
                prop_assert!((via - oracle_ocs(&b, p)).norm() < 1e-9);
            }
        }

        #[test]
        fn corners_map_to_uniform_scaled_cube(b in arb_box()) {
            let out = ocs_transform(&cam(b.corners().to_vec()), &b, OcsScale::UniformLength).unwrap();
            let half = Vector3::new(0.5, b.h() / (2.0 * b.l()), b.w() / (2.0 * b.l()));
            for p in out.points() {
                for a in 0..3 {
                    prop_assert!((p[a].abs() - half[a]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn completion_is_translation_equivariant(b in arb_box(), t in (-5.0..5.0f64, -1.0..1.0f64, -1.0..1.0f64)) {
            let t = Vector3::new(t.0, t.1, t.2);
            let local: Vec<Point3> = b.corners().iter().map(|c| Point3::from((c.coords + b.center.coords) * 0.5)).collect();
            let moved: Vec<Point3> = local.iter().map(|p| p + t).collect();
            let a = mirror_hallucinate(&ocs_transform(&cam(local), &b, OcsScale::UniformLength).unwrap(), 16).unwrap();
            let c = mirror_hallucinate(&ocs_transform(&cam(moved), &b.translated(t), OcsScale::UniformLength).unwrap(), 16).unwrap();
            // Compared as sets: near-ties in the farthest-point order may flip.
            for p in a.points() {
                prop_assert!(c.points().iter().any(|q| (p - q).norm() < 1e-9));
            }
        }

        #[test]
        fn mirror_union_is_reflection_invariant(pts in prop::collection::vec((-0.5..0.5f64, -0.3..0.3f64, -0.3..0.3f64), 1..30)) {
            let cloud = PointCloud::new(Frame::Object, pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect());
            let union = mirror_union(&cloud).unwrap();
            for p in &union {
                let r = Point3::new(p.x, p.y, -p.z);
                prop_assert!(union.contains(&r));
            }
        }
    }
}
