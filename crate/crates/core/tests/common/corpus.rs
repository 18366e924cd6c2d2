//! Malformed-input corpus and write-then-parse round trips, shared by the
//! core integration tests and the acceptance target.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereo_shape::instance::Frame;
use stereo_shape::kitti_io::{
    fmt_g6, parse_calib_file, parse_cloud_ply, parse_cloud_xyz, parse_label_file, parse_mesh_obj, parse_mesh_stl,
    parse_pfm, parse_pgm, write_calib_file, write_cloud_ply, write_label_file, write_mesh_obj, CalibRecord,
    LabelRecord,
};
use stereo_shape::metrics::{EvalConfig, Rect2D};
use stereo_shape::occupancy::TriangleMesh;
use stereo_shape::synth::SynthScene;
use stereo_shape::voxel::Tensor;
use stereo_shape::{Error, Point3, PointCloud};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/malformed")
}

fn parse_by_name(name: &str, bytes: &[u8]) -> Result<(), Error> {
    let text = || String::from_utf8_lossy(bytes).into_owned();
    let ext = Path::new(name).extension().and_then(|e| e.to_str()).unwrap_or("");
    if name.starts_with("label_") || name.starts_with("pred_") {
        parse_label_file(&text()).map(drop)
    } else if name.starts_with("calib_") {
        parse_calib_file(&text()).map(drop)
    } else if name.starts_with("config_") {
        EvalConfig::parse(&text()).map(drop)
    } else if name.starts_with("scene_") {
        SynthScene::parse(&text()).map(drop)
    } else {
        match ext {
            "obj" => parse_mesh_obj(&text()).map(drop),
            "stl" => parse_mesh_stl(bytes).map(drop),
            "ply" => parse_cloud_ply(&text(), Frame::Object).map(drop),
            "xyz" => parse_cloud_xyz(&text(), Frame::Object).map(drop),
            "pgm" => parse_pgm(bytes).map(drop),
            "pfm" => parse_pfm(bytes).map(drop),
            "bin" => Tensor::parse(bytes).map(drop),
            other => panic!("no parser for `.{other}` ({name})"),
        }
    }
}

fn located(err: &Error, locator: &str) -> bool {
    let (kind, want) = locator.split_once('=').expect("locator is kind=value");
    match (kind, err) {
        ("line", Error::MalformedLine { line, .. }) => line.to_string() == want,
        ("line", Error::Config(msg)) => msg.contains(&format!("line {want}:")),
        ("key", Error::MissingKey(k)) | ("key", Error::MalformedMatrix { key: k, .. }) => k == want,
        ("data", Error::MalformedData { format, reason }) => *format == want && !reason.is_empty(),
        _ => false,
    }
}

/// Runs every corpus file through its parser. Returns `(file, error text)`
/// for each file, or the list of violations.
pub fn check_corpus() -> Result<Vec<(String, String)>, Vec<String>> {
    let dir = corpus_dir();
    let manifest = std::fs::read_to_string(dir.join("MANIFEST")).expect("corpus manifest");
    let mut listed = Vec::new();
    let mut problems = Vec::new();
    let mut errors = Vec::new();
    for line in manifest.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (name, locator) = line.split_once(' ').expect("manifest line is `file locator`");
        listed.push(name.to_string());
        let bytes = std::fs::read(dir.join(name)).expect("corpus file");
        match parse_by_name(name, &bytes) {
            Ok(()) => problems.push(format!("{name}: accepted silently")),
            Err(e) if located(&e, locator) => errors.push((name.to_string(), e.to_string())),
            Err(e) => problems.push(format!("{name}: expected {locator}, got `{e}`")),
        }
    }
    let mut on_disk: Vec<String> = std::fs::read_dir(&dir)
        .expect("corpus dir")
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "MANIFEST")
        .collect();
    on_disk.sort();
    for f in &on_disk {
        if !listed.contains(f) {
            problems.push(format!("{f}: not listed in MANIFEST"));
        }
    }
    if listed.len() < 10 {
        problems.push(format!("corpus has only {} files", listed.len()));
    }
    if problems.is_empty() {
        Ok(errors)
    } else {
        Err(problems)
    }
}

fn round6(x: f64) -> f64 {
    fmt_g6(x).parse().unwrap()
}

fn random_label(rng: &mut ChaCha8Rng, score: bool) -> LabelRecord {
    let l = rng.gen_range(0.0..600.0);
    let t = rng.gen_range(0.0..300.0);
    LabelRecord {
        class: "Car".into(),
        truncated: rng.gen_range(0.0..1.0),
        occluded: rng.gen_range(0..4),
        alpha: rng.gen_range(-3.14..3.14),
        bbox: Rect2D::new(l, t, l + rng.gen_range(1.0..300.0), t + rng.gen_range(1.0..100.0)),
        dimensions: [rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0), rng.gen_range(3.0..5.0)],
        location: [rng.gen_range(-20.0..20.0), rng.gen_range(0.0..3.0), rng.gen_range(2.0..70.0)],
        rotation_y: rng.gen_range(-3.14..3.14),
        score: score.then(|| rng.gen_range(0.0..1.0)),
    }
}

fn rounded_label(r: &LabelRecord) -> LabelRecord {
    LabelRecord {
        truncated: round6(r.truncated),
        alpha: round6(r.alpha),
        bbox: Rect2D::new(round6(r.bbox.left), round6(r.bbox.top), round6(r.bbox.right), round6(r.bbox.bottom)),
        dimensions: r.dimensions.map(round6),
        location: r.location.map(round6),
        rotation_y: round6(r.rotation_y),
        score: r.score.map(round6),
        ..r.clone()
    }
}

/// Write, parse, write again: parsed values must equal the 6-digit
/// rounding of the originals and the second write must match the first.
pub fn check_round_trips(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..50 {
        let recs: Vec<LabelRecord> = (0..8).map(|i| random_label(&mut rng, i % 2 == 0)).collect();
        let text = write_label_file(&recs);
        let parsed = parse_label_file(&text).map_err(|e| e.to_string())?;
        let want: Vec<LabelRecord> = recs.iter().map(rounded_label).collect();
        if parsed != want {
            return Err("label values differ after round trip".into());
        }
        if write_label_file(&parsed) != text {
            return Err("label rewrite is not byte-identical".into());
        }

        let fx = rng.gen_range(300.0..1000.0);
        let mut p2 = [[0.0; 4]; 3];
        p2[0][0] = fx;
        p2[1][1] = fx;
        p2[0][2] = rng.gen_range(300.0..700.0);
        p2[1][2] = rng.gen_range(100.0..300.0);
        p2[2][2] = 1.0;
        let mut p3 = p2;
        p3[0][3] = -fx * rng.gen_range(0.1..1.0);
        let calib = CalibRecord { p2, p3 };
        let text = write_calib_file(&calib);
        let parsed = parse_calib_file(&text).map_err(|e| e.to_string())?;
        let want = CalibRecord { p2: p2.map(|r| r.map(round6)), p3: p3.map(|r| r.map(round6)) };
        if parsed != want || write_calib_file(&parsed) != text {
            return Err("calibration round trip mismatch".into());
        }

        let pts: Vec<Point3> = (0..40)
            .map(|_| Point3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
            .collect();
        let cloud = PointCloud::new(Frame::Object, pts.clone());
        let text = write_cloud_ply(&cloud);
        let parsed = parse_cloud_ply(&text, Frame::Camera).map_err(|e| e.to_string())?;
        let close = parsed.points().iter().zip(&pts).all(|(a, b)| {
            (0..3).all(|k| a[k] == round6(b[k]) && (a[k] - b[k]).abs() <= 1e-6)
        });
        if !close || parsed.frame() != Frame::Object || write_cloud_ply(&parsed) != text {
            return Err("cloud round trip mismatch".into());
        }

        let tris: Vec<[usize; 3]> = (0..13).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
        let mesh = TriangleMesh::new(pts[..39].to_vec(), tris).map_err(|e| e.to_string())?;
        let text = write_mesh_obj(&mesh);
        let parsed = parse_mesh_obj(&text).map_err(|e| e.to_string())?;
        let close = parsed.vertices().iter().zip(mesh.vertices()).all(|(a, b)| (a - b).amax() <= 1e-6);
        if !close || parsed.triangles() != mesh.triangles() || write_mesh_obj(&parsed) != text {
            return Err("mesh round trip mismatch".into());
        }
    }
    Ok(())
}
