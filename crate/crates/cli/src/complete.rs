use std::path::PathBuf;

use anyhow::Result;
use stereo_shape::instance::{mirror_hallucinate, ocs_transform, Box3D, Frame, OcsScale};
use stereo_shape::kitti_io::write_cloud_ply;
use stereo_shape::metrics::CdNorm;
use stereo_shape::{Error, Point3};

use crate::evaluate::{load_library, read_cloud};
use crate::{config_error, in_file, write_file};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Input cloud (`.ply`, or `.xyz` in camera coordinates). A PLY
    /// `comment frame object` header marks it as already normalized.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Box as `x,y,z,h,w,l,yaw` (center in camera coordinates).
    #[arg(long = "box", value_name = "X,Y,Z,H,W,L,YAW", allow_hyphen_values = true)]
    pub bbox: String,
    /// Output PLY in the object frame.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of output points.
    #[arg(short = 'n', long, default_value_t = 2048)]
    pub points: usize,
    /// Also report MMD before and after completion against this library
    /// (a template directory or `builtin`).
    #[arg(long)]
    pub templates: Option<String>,
}

pub(crate) fn parse_box(s: &str) -> Result<Box3D> {
    let vals = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| config_error(format!("box `{s}` must be 7 comma-separated numbers")))?;
    if vals.len() != 7 {
        return Err(config_error(format!("box needs 7 values x,y,z,h,w,l,yaw, got {}", vals.len())));
    }
    Box3D::new(Point3::new(vals[0], vals[1], vals[2]), vals[3], vals[4], vals[5], vals[6])
        .map_err(|e| config_error(format!("box `{s}`: {e}")))
}

pub fn run(args: Args) -> Result<()> {
    if args.points == 0 {
        return Err(config_error("point count must be >= 1"));
    }
    let b = parse_box(&args.bbox)?;
    let input = read_cloud(&args.cloud, Frame::Camera)?;
    if input.real_points().next().is_none() {
        return Err(anyhow::Error::new(Error::EmptyCloud.in_file(&args.cloud)));
    }
    let partial = match input.frame() {
        Frame::Object => input,
        Frame::Camera => in_file(ocs_transform(&input, &b, OcsScale::UniformLength), &args.cloud)?,
    };
    let completed = in_file(mirror_hallucinate(&partial, args.points), &args.cloud)?;
    write_file(&args.out, write_cloud_ply(&completed))?;
    println!("points in: {}", partial.real_points().count());
    println!("points out: {}", completed.len());
    if let Some(spec) = &args.templates {
        let lib = load_library(spec, stereo_shape::metrics::DEFAULT_TEMPLATE_POINTS)?;
        let before = lib.mmd(&partial.real_vec(), CdNorm::L2)?;
        let after = lib.mmd(completed.points(), CdNorm::L2)?;
        println!("mmd partial: {}", stereo_shape::kitti_io::fmt_g6(before));
        println!("mmd completed: {}", stereo_shape::kitti_io::fmt_g6(after));
    }
    Ok(())
}
