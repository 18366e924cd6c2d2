//! Deterministic synthetic scenes: boxes carrying simple template shapes,
//! rendered into foreground masks with exact disparities.
//!
//! Templates live in the object frame at the uniform `1 / l` scale, so a
//! template spans `[-1/2, 1/2]` along the length axis. Rendering casts one
//! ray through every pixel center and keeps the nearest surface hit, which
//! is a per-pixel depth buffer over the template's own surface.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, CameraIntrinsics, Pixel, Point3, StereoRig, Vec3};
use crate::instance::{ocs_transform, Box3D, ForegroundMask, Frame, MaskPixel, OcsScale, PointCloud};
use crate::kitti_io::LabelRecord;
use crate::metrics::{Rect2D, TemplateLibrary};

/// Template surface shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeTemplate {
    /// Sphere of diameter 1.
    Sphere,
    /// Surface of the normalized box.
    BoxShell,
    /// Body box over the lower 60% of the height with a half-cylinder cabin
    /// on top whose axis runs along the width.
    ToyCar,
    /// Double-sided rectangle in the `z = 0` plane spanning length and height.
    Plane,
}

impl ShapeTemplate {
    /// Templates symmetric under reflection across the object `z = 0` plane
    /// with a non-degenerate extent along `z`.
    pub const SYMMETRIC: [ShapeTemplate; 3] = [ShapeTemplate::Sphere, ShapeTemplate::BoxShell, ShapeTemplate::ToyCar];

    pub fn name(self) -> &'static str {
        match self {
            ShapeTemplate::Sphere => "sphere",
            ShapeTemplate::BoxShell => "box-shell",
            ShapeTemplate::ToyCar => "toy-car",
            ShapeTemplate::Plane => "plane",
        }
    }
}

impl FromStr for ShapeTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeTemplate::Sphere),
            "box-shell" => Ok(ShapeTemplate::BoxShell),
            "toy-car" => Ok(ShapeTemplate::ToyCar),
            "plane" => Ok(ShapeTemplate::Plane),
            other => Err(Error::UnknownShape(other.to_string())),
        }
    }
}

impl fmt::Display for ShapeTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Height and width relative to length, `(h / l, w / l)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aspect {
    pub height: f64,
    pub width: f64,
}

impl Default for Aspect {
    /// A 1.5 x 1.6 x 4 m car.
    fn default() -> Self {
        Self { height: 1.5 / 4.0, width: 1.6 / 4.0 }
    }
}

impl Aspect {
    pub fn of(b: &Box3D) -> Self {
        Self { height: b.h() / b.l(), width: b.w() / b.l() }
    }
}

/// Axis-aligned half extents in the object frame.
#[derive(Debug, Clone, Copy)]
struct Cuboid {
    center: Vec3,
    half: Vec3,
}

impl Cuboid {
    fn area_faces(&self) -> [f64; 3] {
        let h = self.half;
        [4.0 * h.y * h.z, 4.0 * h.x * h.z, 4.0 * h.x * h.y]
    }

    /// Ray entry/exit parameters, `None` on a miss.
    fn ray_interval(&self, o: &Vec3, d: &Vec3) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            let (min, max) = (self.center[a] - self.half[a], self.center[a] + self.half[a]);
            if d[a] == 0.0 {
                if o[a] < min || o[a] > max {
                    return None;
                }
                continue;
            }
            let (t0, t1) = ((min - o[a]) / d[a], (max - o[a]) / d[a]);
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// Toy-car parts derived from the aspect.
struct CarParts {
    body: Cuboid,
    /// Cabin axis height (top of the body) and radius.
    axis_y: f64,
    radius: f64,
    half_w: f64,
}

impl CarParts {
    fn new(a: Aspect) -> Self {
        let half_h = 0.5 * a.height;
        let body_h = 0.6 * a.height;
        let axis_y = half_h - body_h;
        Self {
            body: Cuboid {
                center: Vec3::new(0.0, half_h - 0.5 * body_h, 0.0),
                half: Vec3::new(0.5, 0.5 * body_h, 0.5 * a.width),
            },
            axis_y,
            radius: (0.4 * a.height).min(0.5),
            half_w: 0.5 * a.width,
        }
    }

    /// Interval of the cabin solid: inside the cylinder, above the body top
    /// (`y <= axis_y`, y points down) and within the width.
    fn cabin_interval(&self, o: &Vec3, d: &Vec3) -> Option<(f64, f64)> {
        let (ox, oy) = (o.x, o.y - self.axis_y);
        let a = d.x * d.x + d.y * d.y;
        let (mut lo, mut hi);
        let c = ox * ox + oy * oy - self.radius * self.radius;
        if a == 0.0 {
            if c > 0.0 {
                return None;
            }
            lo = f64::NEG_INFINITY;
            hi = f64::INFINITY;
        } else {
            let b = ox * d.x + oy * d.y;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            lo = (-b - s) / a;
            hi = (-b + s) / a;
        }
        if d.y == 0.0 {
            if oy > 0.0 {
                return None;
            }
        } else {
            let t = -oy / d.y;
            if d.y > 0.0 {
                hi = hi.min(t);
            } else {
                lo = lo.max(t);
            }
        }
        if d.z == 0.0 {
            if o.z.abs() > self.half_w {
                return None;
            }
        } else {
            let (t0, t1) = ((-self.half_w - o.z) / d.z, (self.half_w - o.z) / d.z);
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
        (lo <= hi).then_some((lo, hi))
    }
}

fn first_hit(interval: Option<(f64, f64)>) -> Option<f64> {
    let (lo, hi) = interval?;
    if lo > 0.0 {
        Some(lo)
    } else if hi > 0.0 {
        Some(hi)
    } else {
        None
    }
}

/// Smallest positive ray parameter at which `o + t d` meets the template
/// surface, in the object frame.
pub fn ray_hit(shape: ShapeTemplate, aspect: Aspect, o: &Vec3, d: &Vec3) -> Option<f64> {
    match shape {
        ShapeTemplate::Sphere => {
            let a = d.norm_squared();
            let b = o.dot(d);
            let c = o.norm_squared() - 0.25;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            first_hit(Some(((-b - s) / a, (-b + s) / a)))
        }
        ShapeTemplate::BoxShell => {
            let cub = Cuboid {
                center: Vec3::zeros(),
                half: Vec3::new(0.5, 0.5 * aspect.height, 0.5 * aspect.width),
            };
            first_hit(cub.ray_interval(o, d))
        }
        ShapeTemplate::ToyCar => {
            let car = CarParts::new(aspect);
            let body = first_hit(car.body.ray_interval(o, d));
            let cabin = first_hit(car.cabin_interval(o, d));
            match (body, cabin) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            }
        }
        ShapeTemplate::Plane => {
            if d.z == 0.0 {
                return None;
            }
            let t = -o.z / d.z;
            let p = o + d * t;
            (t > 0.0 && p.x.abs() <= 0.5 && p.y.abs() <= 0.5 * aspect.height).then_some(t)
        }
    }
}

/// Object-frame bounds of a template.
pub fn template_bounds(shape: ShapeTemplate, aspect: Aspect) -> (Vec3, Vec3) {
    let half = match shape {
        ShapeTemplate::Sphere => Vec3::new(0.5, 0.5, 0.5),
        ShapeTemplate::BoxShell | ShapeTemplate::ToyCar => Vec3::new(0.5, 0.5 * aspect.height, 0.5 * aspect.width),
        ShapeTemplate::Plane => Vec3::new(0.5, 0.5 * aspect.height, 0.0),
    };
    (-half, half)
}

fn sample_cuboid_face(rng: &mut ChaCha8Rng, c: &Cuboid, face: usize) -> Vec3 {
    let axis = face / 2;
    let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
    let mut p = Vec3::zeros();
    for a in 0..3 {
        p[a] = if a == axis {
            c.center[a] + sign * c.half[a]
        } else {
            c.center[a] + rng.gen_range(-c.half[a]..=c.half[a])
        };
    }
    p
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

fn sample_surface(rng: &mut ChaCha8Rng, shape: ShapeTemplate, aspect: Aspect) -> Vec3 {
    match shape {
        ShapeTemplate::Sphere => {
            // Uniform on the sphere via z and azimuth (Archimedes).
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let phi = rng.gen_range(0.0..2.0 * PI);
            let r = (1.0 - z * z).max(0.0).sqrt();
            Vec3::new(r * phi.cos(), r * phi.sin(), z) * 0.5
        }
        ShapeTemplate::BoxShell => {
            let c = Cuboid {
                center: Vec3::zeros(),
                half: Vec3::new(0.5, 0.5 * aspect.height, 0.5 * aspect.width),
            };
            let a = c.area_faces();
            let face = pick(rng, &[a[0], a[0], a[1], a[1], a[2], a[2]]);
            sample_cuboid_face(rng, &c, face)
        }
        ShapeTemplate::ToyCar => {
            let car = CarParts::new(aspect);
            let b = car.body;
            let a = b.area_faces();
            let r = car.radius;
            let w = 2.0 * car.half_w;
            // Body faces with the top face reduced by the cabin footprint,
            // then the curved cabin roof and its two half-disc ends.
            let top_visible = a[1] - 2.0 * r * w;
            let weights = [a[0], a[0], top_visible, a[1], a[2], a[2], PI * r * w, 0.5 * PI * r * r, 0.5 * PI * r * r];
            match pick(rng, &weights) {
                2 => loop {
                    let p = sample_cuboid_face(rng, &b, 2);
                    if p.x.abs() >= r {
                        break p;
                    }
                },
                6 => {
                    let phi = rng.gen_range(0.0..PI);
                    Vec3::new(r * phi.cos(), car.axis_y - r * phi.sin(), rng.gen_range(-car.half_w..=car.half_w))
                }
                k @ (7 | 8) => {
                    let rho = r * rng.gen_range(0.0f64..=1.0).sqrt();
                    let phi = rng.gen_range(0.0..PI);
                    let z = if k == 7 { -car.half_w } else { car.half_w };
                    Vec3::new(rho * phi.cos(), car.axis_y - rho * phi.sin(), z)
                }
                k => {
                    let face = [0, 1, 2, 3, 4, 5][k.min(5)];
                    sample_cuboid_face(rng, &b, face)
                }
            }
        }
        ShapeTemplate::Plane => Vec3::new(
            rng.gen_range(-0.5..=0.5),
            rng.gen_range(-0.5 * aspect.height..=0.5 * aspect.height),
            0.0,
        ),
    }
}

/// `n` points drawn uniformly by area from the template surface, for the
/// default car aspect.
pub fn template_cloud(shape: ShapeTemplate, n: usize, seed: u64) -> Result<PointCloud> {
    template_cloud_with(shape, Aspect::default(), n, seed)
}

pub fn template_cloud_with(shape: ShapeTemplate, aspect: Aspect, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Config("template point count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n).map(|_| Point3::from(sample_surface(&mut rng, shape, aspect))).collect();
    Ok(PointCloud::new(Frame::Object, points))
}

/// Looks a template up by name.
pub fn template_cloud_named(name: &str, n: usize, seed: u64) -> Result<PointCloud> {
    template_cloud(name.parse()?, n, seed)
}

/// A placed template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthInstance {
    pub bbox: Box3D,
    pub shape: ShapeTemplate,
}

/// Camera, image size and placed templates.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub rig: StereoRig,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<SynthInstance>,
    pub seed: u64,
}

/// Visible-surface rendering of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub mask: ForegroundMask,
    /// Camera-frame surface point behind every mask pixel, in mask order.
    pub partial: PointCloud,
}

impl SynthScene {
    /// KITTI-like 1242x375 camera.
    pub fn new(instances: Vec<SynthInstance>, seed: u64) -> Result<Self> {
        let k = CameraIntrinsics::new(721.5377, 721.5377, 609.5593, 172.854)?;
        let scene = Self { rig: StereoRig::new(k, 0.54)?, width: 1242, height: 375, instances, seed };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        for (i, inst) in self.instances.iter().enumerate() {
            if !(inst.bbox.center.z > 0.0) {
                return Err(Error::Config(format!("object {i} must lie in front of the camera (z > 0)")));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines: `fx`, `fy`, `cx`, `cy`, `baseline`,
    /// `width`, `height`, `seed`, and repeated
    /// `object = <shape> x y z h w l yaw` with the box center in camera
    /// coordinates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut scene = Self::new(vec![], 0)?;
        let (mut fx, mut fy, mut cx, mut cy, mut baseline) = (
            scene.rig.left().fx(),
            scene.rig.left().fy(),
            scene.rig.left().cx(),
            scene.rig.left().cy(),
            scene.rig.baseline(),
        );
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Config(format!("scene line {}: {m}", n + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| err(format!("invalid number `{v}`")));
            match k {
                "fx" => fx = num(v)?,
                "fy" => fy = num(v)?,
                "cx" => cx = num(v)?,
                "cy" => cy = num(v)?,
                "baseline" => baseline = num(v)?,
                "width" => scene.width = v.parse().map_err(|_| err(format!("invalid width `{v}`")))?,
                "height" => scene.height = v.parse().map_err(|_| err(format!("invalid height `{v}`")))?,
                "seed" => scene.seed = v.parse().map_err(|_| err(format!("invalid seed `{v}`")))?,
                "object" => {
                    let toks: Vec<&str> = v.split_whitespace().collect();
                    if toks.len() != 8 {
                        return Err(err(format!("object needs `shape x y z h w l yaw`, got {} fields", toks.len())));
                    }
                    let shape: ShapeTemplate = toks[0].parse()?;
                    let f: Vec<f64> = toks[1..].iter().map(|t| num(t)).collect::<Result<_>>()?;
                    let bbox = Box3D::new(Point3::new(f[0], f[1], f[2]), f[3], f[4], f[5], f[6])
                        .map_err(|e| err(e.to_string()))?;
                    scene.instances.push(SynthInstance { bbox, shape });
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        scene.rig = StereoRig::new(CameraIntrinsics::new(fx, fy, cx, cy)?, baseline).map_err(|e| Error::Config(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    /// Pixel rectangle `[u0, u1) x [v0, v1)` that can contain the instance.
    fn pixel_window(&self, inst: &SynthInstance) -> (u32, u32, u32, u32) {
        let (lo, hi) = template_bounds(inst.shape, Aspect::of(&inst.bbox));
        let r = inst.bbox.rotation();
        let l = inst.bbox.l();
        let k = self.rig.left();
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for c in 0..8 {
            let o = Vec3::new(
                if c & 1 == 0 { lo.x } else { hi.x },
                if c & 2 == 0 { lo.y } else { hi.y },
                if c & 4 == 0 { lo.z } else { hi.z },
            );
            let p = inst.bbox.center + r * o * l;
            match k.project(&p) {
                Ok(px) => {
                    umin = umin.min(px.u);
                    umax = umax.max(px.u);
                    vmin = vmin.min(px.v);
                    vmax = vmax.max(px.v);
                }
                Err(_) => return (0, self.width, 0, self.height),
            }
        }
        let clamp = |x: f64, n: u32| x.clamp(0.0, n as f64) as u32;
        (
            clamp(umin.floor(), self.width),
            clamp(umax.ceil() + 1.0, self.width),
            clamp(vmin.floor(), self.height),
            clamp(vmax.ceil() + 1.0, self.height),
        )
    }

    /// Casts one ray per pixel center and keeps the nearest hit of the
    /// instance's template. Disparities are exact for the hit depth.
    pub fn render_instance(&self, index: usize) -> Result<Rendered> {
        let inst = self.instances.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.instances.len(),
        })?;
        let aspect = Aspect::of(&inst.bbox);
        let rt = inst.bbox.rotation().transpose();
        let l = inst.bbox.l();
        let origin = rt * (-inst.bbox.center.coords) / l;
        let k = *self.rig.left();
        let (u0, u1, v0, v1) = self.pixel_window(inst);
        let rows: Vec<Vec<(MaskPixel, Point3)>> = (v0..v1)
            .into_par_iter()
            .map(|v| {
                let mut row = Vec::new();
                for u in u0..u1 {
                    let ray = k
                        .backproject(Pixel::new(u as f64, v as f64), 1.0)
                        .expect("unit depth")
                        .coords;
                    let dir = rt * ray / l;
                    if let Some(t) = ray_hit(inst.shape, aspect, &origin, &dir) {
                        let p = Point3::from(ray * t);
                        let disparity = self.rig.depth_to_disparity(p.z).expect("hit in front of camera");
                        row.push((MaskPixel { u, v, disparity }, p));
                    }
                }
                row
            })
            .collect();
        let (pixels, points): (Vec<MaskPixel>, Vec<Point3>) = rows.into_iter().flatten().unzip();
        Ok(Rendered {
            mask: ForegroundMask::new(self.width, self.height, pixels)?,
            partial: PointCloud::new(Frame::Camera, points),
        })
    }

    /// Image-clipped 2D box of the projected 3D box corners, `None` when a
    /// corner is behind the camera or the box falls outside the image.
    pub fn projected_bbox(&self, b: &Box3D) -> Option<Rect2D> {
        let k = self.rig.left();
        let (mut l, mut t, mut r, mut bt) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for c in b.corners() {
            let px = k.project(&c).ok()?;
            l = l.min(px.u);
            t = t.min(px.v);
            r = r.max(px.u);
            bt = bt.max(px.v);
        }
        let (w, h) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        let rect = Rect2D::new(l.max(0.0), t.max(0.0), r.min(w), bt.min(h));
        (rect.right > rect.left && rect.bottom > rect.top).then_some(rect)
    }

    /// KITTI label row for instance `index` with the given class, zero
    /// truncation and occlusion, and an optional score.
    pub fn label_record(&self, index: usize, class: &str, score: Option<f64>) -> Result<LabelRecord> {
        let inst = self.instances.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.instances.len(),
        })?;
        let b = &inst.bbox;
        let bbox = self
            .projected_bbox(b)
            .ok_or_else(|| Error::Config(format!("object {index} does not project into the image")))?;
        let c = b.center;
        Ok(LabelRecord {
            class: class.to_string(),
            truncated: 0.0,
            occluded: 0,
            alpha: normalize_angle(b.yaw() - c.x.atan2(c.z)),
            bbox,
            dimensions: [b.h(), b.w(), b.l()],
            location: [c.x, c.y + 0.5 * b.h(), c.z],
            rotation_y: b.yaw(),
            score,
        })
    }

    pub fn render_all(&self) -> Result<Vec<Rendered>> {
        (0..self.instances.len()).into_par_iter().map(|i| self.render_instance(i)).collect()
    }
}

/// Library of the symmetric templates at the default aspect, `n` points each.
pub fn symmetric_library(n: usize, seed: u64) -> Result<TemplateLibrary> {
    let templates = ShapeTemplate::SYMMETRIC
        .iter()
        .map(|&s| Ok((s.name().to_string(), template_cloud(s, n, seed)?.points().to_vec())))
        .collect::<Result<Vec<_>>>()?;
    TemplateLibrary::new(templates)
}

/// Default car box at `(0, 0, depth)` with zero yaw, carrying `shape`.
pub fn frontal_scene(shape: ShapeTemplate, depth: f64, seed: u64) -> Result<SynthScene> {
    let bbox = Box3D::new(Point3::new(0.0, 0.0, depth), 1.5, 1.6, 4.0, 0.0)?;
    SynthScene::new(vec![SynthInstance { bbox, shape }], seed)
}

/// Object-frame visible surface of `shape` seen frontally at `depth`.
pub fn frontal_partial(shape: ShapeTemplate, depth: f64) -> Result<PointCloud> {
    let scene = frontal_scene(shape, depth, 0)?;
    let r = scene.render_instance(0)?;
    ocs_transform(&r.partial, &scene.instances[0].bbox, OcsScale::UniformLength)
}
