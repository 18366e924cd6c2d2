//! Geometry, shape-completion and evaluation toolkit for stereo 3D object
//! detection with implicit shape reconstruction.
//!
//! - [`geometry`]: pinhole/stereo camera math.
//! - [`voxel`]: scene voxel grid, feature warping, BEV reduction.
//! - [`instance`]: visible-point extraction, object-frame normalization and
//!   symmetry completion.
//! - [`occupancy`]: occupancy fields and marching cubes.
//! - [`metrics`]: Chamfer/MMD, IoU, AP, AOS, MMDTP and AP_MMD.
//! - [`kitti_io`]: strict KITTI parsers and mesh/cloud writers.
//! - [`synth`]: deterministic synthetic scenes.

pub mod error;
pub mod geometry;
pub mod instance;
pub mod kdtree;
pub mod kitti_io;
mod mc_table;
pub mod metrics;
pub mod occupancy;
pub mod synth;
pub mod voxel;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Pixel, Point3, StereoRig, Vec3};
pub use instance::{Box3D, Frame, PointCloud};
