use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use stereo_shape::instance::{ocs_transform, Frame, OcsScale};
use stereo_shape::kitti_io::{
    parse_calib_file, parse_cloud_ply, parse_cloud_xyz, parse_label_file, write_report_kv, write_report_table,
};
use stereo_shape::metrics::{evaluate, EvalConfig, FrameData, TemplateLibrary};
use stereo_shape::{synth, Error, PointCloud};

use crate::{config_error, in_file, read_text, write_file};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Directory of `<stem>.txt` prediction files (16 fields per row);
    /// per-detection clouds at `<stem>/<row>.ply`.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Directory of `<stem>.txt` ground-truth label files.
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Directory of `<stem>.txt` calibration files, validated per frame.
    #[arg(long)]
    pub calib_dir: Option<PathBuf>,
    /// Template library: a directory of `.ply`/`.xyz` object-frame clouds,
    /// or `builtin` for the synthetic symmetric templates.
    #[arg(long)]
    pub templates: Option<String>,
    /// Evaluation config file (`key = value`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, repeatable: `--set beta=0.7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory for `report.kv` and `report.txt`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Sorted `.txt` stems of a directory.
fn stems(dir: &Path) -> Result<Vec<String>> {
    let mut out = BTreeSet::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .with_context(|| format!("non UTF-8 file name {}", path.display()))?;
            out.insert(stem.to_string());
        }
    }
    Ok(out.into_iter().collect())
}

pub(crate) fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<EvalConfig> {
    let mut cfg = match path {
        Some(p) => in_file(EvalConfig::parse(&read_text(p)?), p)?,
        None => EvalConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| config_error(format!("override `{o}` must be KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())
            .map_err(|e| config_error(format!("override `{o}`: {}", e.root())))?;
    }
    cfg.validate().map_err(anyhow::Error::new)?;
    Ok(cfg)
}

pub(crate) fn read_cloud(path: &Path, default: Frame) -> Result<PointCloud> {
    let text = read_text(path)?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => parse_cloud_xyz(&text, default),
        _ => parse_cloud_ply(&text, default),
    };
    in_file(parsed, path)
}

pub(crate) fn load_library(spec: &str, points: usize) -> Result<TemplateLibrary> {
    if spec == "builtin" {
        return Ok(synth::symmetric_library(points, 0)?);
    }
    let dir = Path::new(spec);
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading template directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "ply" || e == "xyz"));
    files.sort();
    let templates = files
        .iter()
        .map(|p| {
            let c = read_cloud(p, Frame::Object)?;
            if c.frame() != Frame::Object {
                return Err(anyhow::Error::new(
                    Error::WrongFrame { expected: "object", found: c.frame().name() }.in_file(p),
                ));
            }
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, c.real_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    if templates.is_empty() {
        return Err(config_error(format!("no .ply or .xyz templates in {}", dir.display())));
    }
    Ok(TemplateLibrary::resampled(templates, points)?)
}

fn load_frame(args: &Args, stem: &str) -> Result<FrameData> {
    let gt_path = args.gt_dir.join(format!("{stem}.txt"));
    let gts = in_file(parse_label_file(&read_text(&gt_path)?), &gt_path)?
        .iter()
        .map(|r| r.to_ground_truth())
        .collect::<stereo_shape::Result<Vec<_>>>();
    let gts = in_file(gts, &gt_path)?;
    if let Some(dir) = &args.calib_dir {
        let p = dir.join(format!("{stem}.txt"));
        in_file(parse_calib_file(&read_text(&p)?).and_then(|c| c.rig()), &p)?;
    }
    let pred_path = args.pred_dir.join(format!("{stem}.txt"));
    let mut dets = Vec::new();
    if pred_path.is_file() {
        let records = in_file(parse_label_file(&read_text(&pred_path)?), &pred_path)?;
        let cloud_dir = args.pred_dir.join(stem);
        for (i, r) in records.iter().enumerate() {
            let cloud_path = cloud_dir.join(format!("{i}.ply"));
            let det = in_file(r.to_detection(None), &pred_path)?;
            let cloud = if cloud_path.is_file() {
                let c = read_cloud(&cloud_path, Frame::Object)?;
                Some(match c.frame() {
                    Frame::Object => c,
                    Frame::Camera => in_file(ocs_transform(&c, &det.box3d, OcsScale::UniformLength), &cloud_path)?,
                })
            } else {
                None
            };
            dets.push(stereo_shape::metrics::Detection { cloud, ..det });
        }
    }
    Ok(FrameData { gts, dets })
}

pub fn run(args: Args) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let frames_stems = stems(&args.gt_dir)?;
    if args.pred_dir.is_dir() {
        let known: BTreeSet<&String> = frames_stems.iter().collect();
        if let Some(extra) = stems(&args.pred_dir)?.into_iter().find(|s| !known.contains(s)) {
            return Err(anyhow::Error::new(
                Error::MalformedData {
                    format: "prediction directory",
                    reason: format!("prediction `{extra}.txt` has no ground-truth file"),
                }
                .in_file(&args.pred_dir),
            ));
        }
    } else {
        return Err(anyhow::anyhow!("prediction directory {} does not exist", args.pred_dir.display()));
    }
    let frames = frames_stems
        .par_iter()
        .map(|s| load_frame(&args, s))
        .collect::<Result<Vec<_>>>()?;
    let any_cloud = frames.iter().any(|f| f.dets.iter().any(|d| d.cloud.is_some()));
    let lib = match &args.templates {
        Some(spec) => Some(load_library(spec, cfg.template_points)?),
        None if any_cloud => {
            return Err(config_error("predictions carry clouds but no --templates library was given"));
        }
        None => None,
    };
    if lib.is_some() {
        for (f, stem) in frames.iter().zip(&frames_stems) {
            if let Some(d) = f.dets.iter().position(|d| d.class == cfg.class && d.cloud.is_none()) {
                let p = args.pred_dir.join(stem).join(format!("{d}.ply"));
                return Err(anyhow::Error::new(Error::MissingCloud(d).in_file(p)));
            }
        }
    }
    let report = evaluate(&frames, lib.as_ref(), &cfg)?;
    let kv = write_report_kv(&report);
    let table = write_report_table(&report);
    if let Some(dir) = &args.out_dir {
        write_file(&dir.join("report.kv"), &kv)?;
        write_file(&dir.join("report.txt"), &table)?;
    }
    print!("{table}");
    Ok(())
}
