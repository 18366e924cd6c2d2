use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereo_shape::instance::{extract_visible, mirror_hallucinate, ocs_inverse, ocs_transform, Box3D, OcsScale};
use stereo_shape::kitti_io::{parse_report_kv, write_report_kv};
use stereo_shape::metrics::{
    chamfer_points, evaluate, iou_3d, iou_bev, CdNorm, Detection, EvalConfig, FrameData, TemplateLibrary,
};
use stereo_shape::occupancy::{marching_cubes, AnalyticField, UniformGrid, DEFAULT_ISO};
use stereo_shape::synth::{frontal_scene, symmetric_library, template_cloud, ShapeTemplate, SynthInstance, SynthScene};
use stereo_shape::{Point3, PointCloud};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturb the rendered disparities so the consistency invariant fails.
    #[arg(long)]
    pub corrupt: bool,
}

type Check = std::result::Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<T>(r: stereo_shape::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn sphere_norms(seed: u64) -> Check {
    let c = e2s(template_cloud(ShapeTemplate::Sphere, 1024, seed))?;
    let worst = c.points().iter().map(|p| (p.coords.norm() - 0.5).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-9, || format!("norm deviates by {worst:e}"))
}

fn template_determinism(seed: u64) -> Check {
    for s in ShapeTemplate::SYMMETRIC {
        let a = e2s(template_cloud(s, 256, seed))?;
        let b = e2s(template_cloud(s, 256, seed))?;
        ensure(a == b, || format!("{s} differs between identical seeds"))?;
    }
    Ok(())
}

fn ocs_round_trip(rng: &mut ChaCha8Rng) -> Check {
    for _ in 0..100 {
        let b = e2s(Box3D::new(
            Point3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-2.0..2.0), rng.gen_range(5.0..50.0)),
            rng.gen_range(1.0..2.0),
            rng.gen_range(1.0..2.0),
            rng.gen_range(2.0..5.0),
            rng.gen_range(-3.1..3.1),
        ))?;
        let cloud = PointCloud::new(stereo_shape::Frame::Camera, b.corners().to_vec());
        let back = e2s(ocs_inverse(&e2s(ocs_transform(&cloud, &b, OcsScale::UniformLength))?, &b, OcsScale::UniformLength))?;
        let err = cloud.points().iter().zip(back.points()).map(|(a, c)| (a - c).norm()).fold(0.0, f64::max);
        ensure(err < 1e-9, || format!("round trip error {err:e}"))?;
    }
    Ok(())
}

fn plane_disparity(depth: f64) -> Check {
    let scene = e2s(frontal_scene(ShapeTemplate::Plane, depth, 0))?;
    let r = e2s(scene.render_instance(0))?;
    let want = scene.rig.focal() * scene.rig.baseline() / depth;
    ensure(!r.mask.is_empty(), || "plane mask is empty".into())?;
    let worst = r.mask.pixels().iter().map(|p| (p.disparity - want).abs()).fold(0.0, f64::max);
    ensure(worst < 1e-9, || format!("disparity deviates from fB/z by {worst:e}"))
}

fn near_face_only(depth: f64) -> Check {
    let scene = e2s(frontal_scene(ShapeTemplate::BoxShell, depth, 0))?;
    let r = e2s(scene.render_instance(0))?;
    let near = depth - 0.5 * scene.instances[0].bbox.w();
    let worst = r.partial.points().iter().map(|p| (p.z - near).abs()).fold(0.0, f64::max);
    ensure(worst < 1e-9, || format!("visible point {worst:e} off the near face"))
}

fn random_scene(rng: &mut ChaCha8Rng, seed: u64) -> stereo_shape::Result<SynthScene> {
    let b = Box3D::new(
        Point3::new(rng.gen_range(-3.0..3.0), rng.gen_range(0.5..1.5), rng.gen_range(8.0..25.0)),
        1.5,
        1.6,
        4.0,
        rng.gen_range(-3.1..3.1),
    )?;
    SynthScene::new(vec![SynthInstance { bbox: b, shape: ShapeTemplate::ToyCar }], seed)
}

fn render_consistency(scene: &SynthScene, corrupt: bool) -> Check {
    let mut r = e2s(scene.render_instance(0))?;
    if corrupt {
        let pixels = r
            .mask
            .pixels()
            .iter()
            .map(|p| stereo_shape::instance::MaskPixel { disparity: p.disparity + 0.5, ..*p })
            .collect();
        r.mask = e2s(stereo_shape::instance::ForegroundMask::new(r.mask.width(), r.mask.height(), pixels))?;
    }
    for (m, p) in r.mask.pixels().iter().zip(r.partial.points()) {
        let d = e2s(scene.rig.depth_to_disparity(p.z))?;
        ensure((m.disparity - d).abs() < 1e-9, || {
            format!("pixel ({}, {}) disparity {} but surface depth gives {}", m.u, m.v, m.disparity, d)
        })?;
    }
    let visible = e2s(extract_visible(&r.mask, &scene.rig, r.mask.len(), 0))?;
    let cd = e2s(chamfer_points(
        &visible.real_vec(),
        r.partial.points(),
        CdNorm::L2,
    ))?;
    let bound = 2.0 * (scene.instances[0].bbox.center.z + 3.0) / scene.rig.focal();
    ensure(cd < bound, || format!("extracted cloud chamfer {cd} exceeds {bound}"))
}

fn completion_improves(lib: &TemplateLibrary, depth: f64) -> Check {
    for s in ShapeTemplate::SYMMETRIC {
        let partial = e2s(stereo_shape::synth::frontal_partial(s, depth))?;
        let completed = e2s(mirror_hallucinate(&partial, 2048))?;
        let before = e2s(lib.mmd(partial.points(), CdNorm::L2))?;
        let after = e2s(lib.mmd(completed.points(), CdNorm::L2))?;
        ensure(after < before, || format!("{s}: completed {after} >= partial {before}"))?;
    }
    Ok(())
}

fn iou_properties(rng: &mut ChaCha8Rng) -> Check {
    for _ in 0..200 {
        let mut b = || {
            Box3D::new(
                Point3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-0.5..0.5), rng.gen_range(-2.0..2.0)),
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.5..4.0),
                rng.gen_range(-3.1..3.1),
            )
        };
        let (a, c) = (e2s(b())?, e2s(b())?);
        let (ab, ba) = (iou_bev(&a, &c), iou_bev(&c, &a));
        ensure((ab - ba).abs() < 1e-12 && (0.0..=1.0).contains(&ab), || format!("iou_bev {ab} vs {ba}"))?;
        let i3 = iou_3d(&a, &c);
        ensure((0.0..=1.0).contains(&i3), || format!("iou_3d {i3} outside [0, 1]"))?;
        ensure((iou_bev(&a, &a) - 1.0).abs() < 1e-12, || "self iou_bev != 1".into())?;
    }
    Ok(())
}

fn perfect_detector(rng: &mut ChaCha8Rng, lib: &TemplateLibrary) -> Check {
    let mut frames = Vec::new();
    for f in 0..3 {
        let scene = e2s(random_scene(rng, f))?;
        let rec = e2s(scene.label_record(0, "Car", None))?;
        let gt = e2s(rec.to_ground_truth())?;
        let det = Detection {
            class: "Car".into(),
            box3d: gt.box3d.with_score(0.9),
            bbox: gt.bbox,
            score: 0.9,
            cloud: Some(PointCloud::new(stereo_shape::Frame::Object, lib.clouds()[2].clone())),
        };
        frames.push(FrameData { gts: vec![gt], dets: vec![det] });
    }
    let cfg = EvalConfig::default();
    let report = e2s(evaluate(&frames, Some(lib), &cfg))?;
    for c in &report.categories {
        let all = [c.ap_2d, c.ap_bev, c.ap_3d, c.aos];
        ensure(all.iter().all(|&v| (v - 1.0).abs() < 1e-12), || format!("{}: {all:?}", c.difficulty.name()))?;
        for (_, ap, apm) in &c.shape {
            ensure(*ap == 1.0 && *apm == Some(1.0), || format!("AP_MMD {apm:?} at AP_2D {ap}"))?;
        }
    }
    let m = report.mmdtp.as_ref().and_then(|m| m.overall);
    ensure(m == Some(0.0), || format!("MMDTP {m:?}"))?;
    let kv = write_report_kv(&report);
    let parsed = e2s(parse_report_kv(&kv))?;
    ensure(parsed.len() == kv.lines().count(), || "report keys not unique".into())
}

fn sphere_mesh() -> Check {
    let f = e2s(AnalyticField::sphere(0.4))?;
    let grid = e2s(UniformGrid::unit_cube(32))?;
    let mesh = marching_cubes(&f, &grid, DEFAULT_ISO);
    ensure(!mesh.is_empty() && mesh.is_closed_manifold(), || "sphere mesh is not a closed manifold".into())?;
    let area = mesh.area();
    let want = 4.0 * std::f64::consts::PI * 0.16;
    ensure((area - want).abs() < 0.1 * want, || format!("area {area} vs {want}"))
}

pub fn run(args: Args) -> Result<u8> {
    let seed = args.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(8.0..30.0);
    let scene = random_scene(&mut rng, seed)?;
    let lib = symmetric_library(2048, seed)?;
    let checks: Vec<(&str, Check)> = vec![
        ("template.sphere_norms", sphere_norms(seed)),
        ("template.determinism", template_determinism(seed)),
        ("geometry.ocs_round_trip", ocs_round_trip(&mut rng)),
        ("render.plane_disparity", plane_disparity(depth)),
        ("render.near_face_only", near_face_only(depth)),
        ("render.disparity_consistency", render_consistency(&scene, args.corrupt)),
        ("complete.mmd_improves", completion_improves(&lib, depth)),
        ("metrics.iou_properties", iou_properties(&mut rng)),
        ("metrics.perfect_detector", perfect_detector(&mut rng, &lib)),
        ("mesh.sphere_closed", sphere_mesh()),
    ];
    let mut failed = 0;
    println!("selftest seed {seed}");
    for (name, r) in &checks {
        match r {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    Ok(if failed == 0 { 0 } else { 1 })
}
