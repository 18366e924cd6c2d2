//! Pinhole and rectified-stereo camera models.
//!
//! Pixel coordinates are continuous with pixel centers at integer
//! coordinates. Camera coordinates follow the usual convention: x right,
//! y down, z forward.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Sub-pixel image location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Left-camera intrinsics `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive and finite, got fx={fx} fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidCamera("principal point must be finite".into()));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    /// The upper-triangular 3x3 matrix `K`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Perspective projection of a camera-frame point.
    pub fn project(&self, p: &Point3) -> Result<Pixel> {
        if !(p.z > 0.0) {
            return Err(Error::NonPositiveDepth(p.z));
        }
        Ok(Pixel {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
        })
    }

    /// `K^-1 [d*u, d*v, d]^T`: the camera-frame point at `depth` behind `px`.
    pub fn backproject(&self, px: Pixel, depth: f64) -> Result<Point3> {
        if !(depth > 0.0) {
            return Err(Error::NonPositiveDepth(depth));
        }
        Ok(Point3::new(
            (px.u - self.cx) * depth / self.fx,
            (px.v - self.cy) * depth / self.fy,
            depth,
        ))
    }
}

/// Rectified stereo pair sharing the left intrinsics; the focal length used
/// for triangulation is `fx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    left: CameraIntrinsics,
    baseline_m: f64,
}

impl StereoRig {
    pub fn new(left: CameraIntrinsics, baseline_m: f64) -> Result<Self> {
        if !(baseline_m > 0.0 && baseline_m.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "baseline must be positive, got {baseline_m}"
            )));
        }
        Ok(Self { left, baseline_m })
    }

    pub fn left(&self) -> &CameraIntrinsics {
        &self.left
    }

    pub fn baseline(&self) -> f64 {
        self.baseline_m
    }

    pub fn focal(&self) -> f64 {
        self.left.fx
    }

    /// `z = f * B / disparity`.
    pub fn disparity_to_depth(&self, disparity: f64) -> Result<f64> {
        if !(disparity > 0.0) {
            return Err(Error::NonPositiveDisparity(disparity));
        }
        Ok(self.focal() * self.baseline_m / disparity)
    }

    pub fn depth_to_disparity(&self, depth: f64) -> Result<f64> {
        if !(depth > 0.0) {
            return Err(Error::NonPositiveDepth(depth));
        }
        Ok(self.focal() * self.baseline_m / depth)
    }
}

/// Rotation about the camera y axis:
///
/// ```text
/// [  cos  0  sin ]
/// [   0   1   0  ]
/// [ -sin  0  cos ]
/// ```
pub fn yaw_rotation(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Translation plus heading about the y axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2DYaw {
    pub translation: Vec3,
    yaw: f64,
}

impl Pose2DYaw {
    pub fn new(translation: Vec3, yaw: f64) -> Self {
        Self {
            translation,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        yaw_rotation(self.yaw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap()
    }

    #[test]
    fn project_examples() {
        let k = k100();
        assert_eq!(k.project(&Point3::new(0.0, 0.0, 2.0)).unwrap(), Pixel::new(50.0, 50.0));
        assert_eq!(k.project(&Point3::new(1.0, 0.0, 2.0)).unwrap(), Pixel::new(100.0, 50.0));

        let k = CameraIntrinsics::new(200.0, 150.0, 60.0, 40.0).unwrap();
        let p = Point3::new(0.3, -0.2, 3.0);
        // Oracle: homogeneous K * p then divide.
        let h = k.matrix() * p.coords;
        let px = k.project(&p).unwrap();
        assert_abs_diff_eq!(px.u, h.x / h.z, epsilon = 1e-12);
        assert_abs_diff_eq!(px.v, h.y / h.z, epsilon = 1e-12);
        assert_abs_diff_eq!(px.u, 80.0, epsilon = 1e-12);
        assert_abs_diff_eq!(px.v, 30.0, epsilon = 1e-12);
    }

    #[test]
    fn project_rejects_non_positive_depth() {
        let k = k100();
        assert!(matches!(
            k.project(&Point3::new(0.0, 0.0, 0.0)),
            Err(Error::NonPositiveDepth(_))
        ));
        assert!(matches!(
            k.backproject(Pixel::new(1.0, 1.0), -1.0),
            Err(Error::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn backproject_examples() {
        let k = k100();
        assert_eq!(k.backproject(Pixel::new(50.0, 50.0), 2.0).unwrap(), Point3::new(0.0, 0.0, 2.0));
        assert_eq!(k.backproject(Pixel::new(100.0, 50.0), 2.0).unwrap(), Point3::new(1.0, 0.0, 2.0));
    }

    #[test]
    fn invalid_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(StereoRig::new(k100(), 0.0).is_err());
    }

    #[test]
    fn matrix_is_upper_triangular() {
        let m = k100().matrix();
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(2, 0)], 0.0);
        assert_eq!(m[(2, 1)], 0.0);
        assert_eq!(m[(2, 2)], 1.0);
    }

    #[test]
    fn disparity_depth_examples() {
        let rig = StereoRig::new(k100(), 0.5).unwrap();
        assert_eq!(rig.disparity_to_depth(10.0).unwrap(), 5.0);
        assert_eq!(rig.depth_to_disparity(5.0).unwrap(), 10.0);
        assert_eq!(rig.depth_to_disparity(100.0 * 0.5).unwrap(), 1.0);
        let near = rig.disparity_to_depth(1e6).unwrap();
        assert!(near > 0.0 && near < 1e-4);
        assert!(matches!(rig.disparity_to_depth(0.0), Err(Error::NonPositiveDisparity(_))));
        assert!(matches!(rig.depth_to_disparity(0.0), Err(Error::NonPositiveDepth(_))));

        let kitti = StereoRig::new(CameraIntrinsics::new(721.0, 721.0, 600.0, 180.0).unwrap(), 0.54).unwrap();
        assert_abs_diff_eq!(kitti.disparity_to_depth(38.934).unwrap(), 10.0, epsilon = 1e-3);
    }

    #[test]
    fn yaw_examples() {
        assert_eq!(yaw_rotation(0.0), Matrix3::identity());
        let r = yaw_rotation(PI / 2.0);
        let v = r * Vec3::new(1.0, 0.0, 0.0);
        assert_abs_diff_eq!(v, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
        assert_eq!(r[(0, 2)], (PI / 2.0).sin());
        assert_eq!(r[(2, 0)], -(PI / 2.0).sin());
    }

    #[test]
    fn angle_normalization() {
        assert_abs_diff_eq!(normalize_angle(PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(0.25), 0.25, epsilon = 1e-15);
        let pose = Pose2DYaw::new(Vec3::zeros(), 7.0);
        assert!(pose.yaw() > -PI && pose.yaw() <= PI);
    }

    proptest! {
        #[test]
        fn project_backproject_round_trip(u in -500.0..1500.0f64, v in -500.0..800.0f64, d in 0.1..80.0f64) {
            let k = CameraIntrinsics::new(721.5377, 721.5377, 609.5593, 172.854).unwrap();
            let px = Pixel::new(u, v);
            let back = k.project(&k.backproject(px, d).unwrap()).unwrap();
            prop_assert!((back.u - u).abs() < 1e-9 && (back.v - v).abs() < 1e-9);
        }

        #[test]
        fn depth_disparity_round_trip(z in 0.05..200.0f64) {
            let rig = StereoRig::new(k100(), 0.54).unwrap();
            let back = rig.disparity_to_depth(rig.depth_to_disparity(z).unwrap()).unwrap();
            prop_assert!((back - z).abs() < 1e-9);
        }

        #[test]
        fn yaw_is_rotation(t in -10.0..10.0f64, s in -10.0..10.0f64) {
            let r = yaw_rotation(t);
            prop_assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
            prop_assert!((r * yaw_rotation(-t) - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((r * yaw_rotation(s) - yaw_rotation(t + s)).norm() < 1e-12);
        }
    }
}
