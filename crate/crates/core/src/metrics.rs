//! Detection and shape evaluation.
//!
//! Shape quality is measured with the Chamfer distance (CD) and the minimal
//! matching distance (MMD) against a template library. Detection quality is
//! the 11-point interpolated AP over 2D, bird's-eye-view and 3D overlaps,
//! plus the AOS-style similarity-weighted variants: AOS for heading and
//! AP_MMD for shape. MMDTP averages MMD over true positives.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::instance::{resample_fps, Box3D, PointCloud};
use crate::kdtree::KdTree;

/// MMD at or above which a detection earns no shape similarity.
pub const MMD_GATE: f64 = 0.05;
pub const DEFAULT_TEMPLATE_POINTS: usize = 2048;

/// Norm used inside the Chamfer distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CdNorm {
    /// Plain Euclidean distance.
    #[default]
    L2,
    SquaredL2,
}

impl FromStr for CdNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(CdNorm::L2),
            "squared-l2" => Ok(CdNorm::SquaredL2),
            other => Err(Error::Config(format!("cd_norm must be `l2` or `squared-l2`, got `{other}`"))),
        }
    }
}

impl fmt::Display for CdNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CdNorm::L2 => "l2",
            CdNorm::SquaredL2 => "squared-l2",
        })
    }
}

fn mean_nearest(from: &[Point3], to: &KdTree<'_>, norm: CdNorm) -> f64 {
    let mut sum = 0.0;
    for p in from {
        let (_, d2) = to.nearest(p).expect("non-empty tree");
        sum += match norm {
            CdNorm::L2 => d2.sqrt(),
            CdNorm::SquaredL2 => d2,
        };
    }
    sum / from.len() as f64
}

/// Symmetric Chamfer distance: mean nearest-neighbour distance from `p` to
/// `g` plus the mean from `g` to `p`.
pub fn chamfer_points(p: &[Point3], g: &[Point3], norm: CdNorm) -> Result<f64> {
    if p.is_empty() || g.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tp = KdTree::build(p);
    let tg = KdTree::build(g);
    Ok(mean_nearest(p, &tg, norm) + mean_nearest(g, &tp, norm))
}

/// Chamfer distance between the non-padding points of two clouds.
pub fn chamfer(p: &PointCloud, g: &PointCloud, norm: CdNorm) -> Result<f64> {
    chamfer_points(&p.real_vec(), &g.real_vec(), norm)
}

/// Canonical class templates in the object frame.
#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    names: Vec<String>,
    clouds: Vec<Vec<Point3>>,
}

impl TemplateLibrary {
    pub fn new(templates: Vec<(String, Vec<Point3>)>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        let mut names = Vec::with_capacity(templates.len());
        let mut clouds = Vec::with_capacity(templates.len());
        for (name, cloud) in templates {
            if cloud.is_empty() {
                return Err(Error::EmptyCloud.in_file(&name));
            }
            names.push(name);
            clouds.push(cloud);
        }
        Ok(Self { names, clouds })
    }

    /// Builds the library with every template resampled to `n` points.
    pub fn resampled(templates: Vec<(String, Vec<Point3>)>, n: usize) -> Result<Self> {
        let templates = templates
            .into_iter()
            .map(|(name, c)| {
                if c.is_empty() {
                    return Err(Error::EmptyCloud.in_file(&name));
                }
                Ok((name, resample_fps(&c, n)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(templates)
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn clouds(&self) -> &[Vec<Point3>] {
        &self.clouds
    }

    /// Minimal Chamfer distance from `p` to any template.
    pub fn mmd(&self, p: &[Point3], norm: CdNorm) -> Result<f64> {
        if p.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let tp = KdTree::build(p);
        let best = self
            .clouds
            .iter()
            .map(|g| {
                let tg = KdTree::build(g);
                mean_nearest(p, &tg, norm) + mean_nearest(g, &tp, norm)
            })
            .fold(f64::INFINITY, f64::min);
        Ok(best)
    }
}

pub fn mmd(p: &PointCloud, lib: &TemplateLibrary, norm: CdNorm) -> Result<f64> {
    lib.mmd(&p.real_vec(), norm)
}

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect2D {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Rect2D {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self { left, top, right, bottom }
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn intersection_area(&self, o: &Rect2D) -> f64 {
        let w = self.right.min(o.right) - self.left.max(o.left);
        let h = self.bottom.min(o.bottom) - self.top.max(o.top);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

pub fn iou_2d(a: &Rect2D, b: &Rect2D) -> Result<f64> {
    for r in [a, b] {
        if !(r.width() > 0.0 && r.height() > 0.0) {
            return Err(Error::DegenerateBox(format!("2D box {r:?} has zero area")));
        }
    }
    let inter = a.intersection_area(b);
    Ok(inter / (a.area() + b.area() - inter))
}

type Vec2 = [f64; 2];

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

/// Ground-plane footprint of a box as a counter-clockwise polygon in `(x, z)`.
pub fn bev_footprint(b: &Box3D) -> [Vec2; 4] {
    let (s, c) = b.yaw().sin_cos();
    let (hl, hw) = (0.5 * b.l(), 0.5 * b.w());
    let mut out = [[0.0; 2]; 4];
    for (n, (lx, lz)) in [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)].into_iter().enumerate() {
        out[n] = [b.center.x + c * lx + s * lz, b.center.z - s * lx + c * lz];
    }
    if polygon_area(&out) < 0.0 {
        out.reverse();
    }
    out
}

/// Sutherland–Hodgman clipping of `subject` against a convex
/// counter-clockwise `clip` polygon.
pub fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in != prev_in {
                let dp = cross(a, b, prev);
                let dc = cross(a, b, cur);
                let t = dp / (dp - dc);
                out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if cur_in {
                out.push(cur);
            }
        }
    }
    out
}

pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let pa = bev_footprint(a);
    let pb = bev_footprint(b);
    polygon_area(&clip_convex(&pa, &pb)).max(0.0)
}

/// Rotated-rectangle IoU on the ground plane.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    let union = a.l() * a.w() + b.l() * b.w() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn height_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let lo = (a.center.y - 0.5 * a.h()).max(b.center.y - 0.5 * b.h());
    let hi = (a.center.y + 0.5 * a.h()).min(b.center.y + 0.5 * b.h());
    (hi - lo).max(0.0)
}

/// 3D IoU with the intersection volume taken as BEV overlap area times the
/// overlap along the height axis.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b) * height_overlap(a, b);
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Evaluation difficulty. `Ignored` objects satisfy no category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const CATEGORIES: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::Ignored => "ignored",
        }
    }

    /// Whether an object of this difficulty counts in `category`.
    pub fn counts_in(self, category: Difficulty) -> bool {
        self != Difficulty::Ignored && self <= category
    }
}

/// Per-category thresholds, ordered easy, moderate, hard.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyTable {
    pub min_height: [f64; 3],
    pub max_occlusion: [u8; 3],
    pub max_truncation: [f64; 3],
}

impl Default for DifficultyTable {
    fn default() -> Self {
        Self {
            min_height: [40.0, 25.0, 25.0],
            max_occlusion: [0, 1, 2],
            max_truncation: [0.15, 0.30, 0.50],
        }
    }
}

/// Labelled object of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub class: String,
    pub box3d: Box3D,
    pub bbox: Rect2D,
    pub truncation: f64,
    pub occlusion: u8,
}

impl GroundTruthObject {
    pub fn is_dont_care(&self) -> bool {
        self.class == "DontCare"
    }
}

/// Easiest category whose height, occlusion and truncation limits the
/// object satisfies.
pub fn assign_difficulty(gt: &GroundTruthObject, table: &DifficultyTable) -> Difficulty {
    let height = gt.bbox.height();
    for (n, d) in Difficulty::CATEGORIES.into_iter().enumerate() {
        if height >= table.min_height[n]
            && gt.occlusion <= table.max_occlusion[n]
            && gt.truncation <= table.max_truncation[n]
        {
            return d;
        }
    }
    Difficulty::Ignored
}

/// Scored prediction with an optional completed object-frame cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class: String,
    pub box3d: Box3D,
    pub bbox: Rect2D,
    pub score: f64,
    pub cloud: Option<PointCloud>,
}

/// All labels and predictions of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameData {
    pub gts: Vec<GroundTruthObject>,
    pub dets: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapKind {
    Iou2d,
    IouBev,
    Iou3d,
}

/// True-positive rule: overlap strictly above `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCriterion {
    pub kind: OverlapKind,
    pub threshold: f64,
}

impl MatchCriterion {
    pub fn overlap(&self, det: &Detection, gt: &GroundTruthObject) -> Result<f64> {
        Ok(match self.kind {
            OverlapKind::Iou2d => iou_2d(&det.bbox, &gt.bbox)?,
            OverlapKind::IouBev => iou_bev(&det.box3d, &gt.box3d),
            OverlapKind::Iou3d => iou_3d(&det.box3d, &gt.box3d),
        })
    }
}

/// Whether a ground-truth object counts, is ignored, or plays no part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtRole {
    Valid,
    Ignored,
    DontCare,
    Unrelated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetOutcome {
    TruePositive { gt: usize, iou: f64 },
    FalsePositive,
    /// Matched an ignored object or fell in a don't-care region.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub outcomes: Vec<DetOutcome>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn is_tp(&self, det: usize) -> bool {
        matches!(self.outcomes[det], DetOutcome::TruePositive { .. })
    }
}

/// Detection order: descending score, ties by index.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

fn best_candidate(
    det: &Detection,
    gts: &[GroundTruthObject],
    roles: &[GtRole],
    role: GtRole,
    taken: &[bool],
    criterion: &MatchCriterion,
) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for (g, gt) in gts.iter().enumerate() {
        if roles[g] != role || taken[g] {
            continue;
        }
        let iou = criterion.overlap(det, gt)?;
        if iou > criterion.threshold && best.is_none_or(|(_, b)| iou > b) {
            best = Some((g, iou));
        }
    }
    Ok(best)
}

/// Greedy matching: detections in descending score each claim the
/// highest-overlap unmatched valid object above the threshold. Detections
/// that instead overlap an ignored object, or cover a don't-care region by
/// more than half their area, are ignored.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    roles: &[GtRole],
    criterion: &MatchCriterion,
) -> Result<MatchResult> {
    assert_eq!(gts.len(), roles.len());
    let mut outcomes = vec![DetOutcome::FalsePositive; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    let never = vec![false; gts.len()];
    for d in score_order(dets) {
        let det = &dets[d];
        if let Some((g, iou)) = best_candidate(det, gts, roles, GtRole::Valid, &gt_matched, criterion)? {
            gt_matched[g] = true;
            outcomes[d] = DetOutcome::TruePositive { gt: g, iou };
            continue;
        }
        if best_candidate(det, gts, roles, GtRole::Ignored, &never, criterion)?.is_some() {
            outcomes[d] = DetOutcome::Ignored;
            continue;
        }
        let det_area = det.bbox.area();
        let in_dont_care = gts.iter().zip(roles).any(|(gt, r)| {
            *r == GtRole::DontCare && det_area > 0.0 && det.bbox.intersection_area(&gt.bbox) / det_area > 0.5
        });
        if in_dont_care {
            outcomes[d] = DetOutcome::Ignored;
        }
    }
    Ok(MatchResult { outcomes, gt_matched })
}

/// Roles of a frame's objects when evaluating `class` at `category`.
pub fn gt_roles(gts: &[GroundTruthObject], class: &str, category: Difficulty, table: &DifficultyTable) -> Vec<GtRole> {
    gts.iter()
        .map(|gt| {
            if gt.is_dont_care() {
                GtRole::DontCare
            } else if gt.class != class {
                GtRole::Unrelated
            } else if assign_difficulty(gt, table).counts_in(category) {
                GtRole::Valid
            } else {
                GtRole::Ignored
            }
        })
        .collect()
}

/// `(recall, value)` sample of a detection sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallPoint {
    pub recall: f64,
    pub value: f64,
}

/// 11-point interpolated average: the mean over recall anchors
/// `0, 0.1, ..., 1` of the best value at recall at or above the anchor.
/// Anchors beyond the reached recall contribute zero.
pub fn ap_11(points: &[RecallPoint]) -> f64 {
    let mut total = 0.0;
    for a in 0..=10 {
        let anchor = a as f64 / 10.0;
        let best = points
            .iter()
            .filter(|p| p.recall >= anchor)
            .map(|p| p.value)
            .fold(0.0, f64::max);
        total += best;
    }
    total / 11.0
}

/// `(0.05 - mmd) * 20`: 1 for a perfect shape, 0 at the gate.
pub fn delta_mmd(mmd: f64) -> f64 {
    (MMD_GATE - mmd) * 20.0
}

/// Shape similarity of one detection: zero for false positives and shapes
/// beyond the gate.
pub fn mmd_similarity(mmd: f64, true_positive: bool) -> f64 {
    if !true_positive || mmd > MMD_GATE {
        0.0
    } else {
        delta_mmd(mmd)
    }
}

/// Heading similarity `(1 + cos(dtheta)) / 2`.
pub fn orientation_similarity(det_yaw: f64, gt_yaw: f64) -> f64 {
    0.5 * (1.0 + (det_yaw - gt_yaw).cos())
}

/// Per-detection outcome of one sweep entry.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SweepEntry {
    score: f64,
    frame: usize,
    det: usize,
    tp: bool,
    orientation: f64,
    shape: Option<f64>,
}

/// Precision, orientation and shape similarity along the detection sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sweep {
    pub precision: Vec<RecallPoint>,
    pub orientation: Vec<RecallPoint>,
    pub shape: Vec<RecallPoint>,
    pub valid_gts: usize,
    pub shape_complete: bool,
}

impl Sweep {
    pub fn ap(&self) -> f64 {
        ap_11(&self.precision)
    }

    pub fn aos(&self) -> f64 {
        ap_11(&self.orientation)
    }

    pub fn ap_mmd(&self) -> Result<f64> {
        if !self.shape_complete {
            return Err(Error::MissingCloud(0));
        }
        Ok(ap_11(&self.shape))
    }
}

/// Per-detection MMD values, `None` where a detection has no cloud.
pub type FrameMmds = Vec<Vec<Option<f64>>>;

/// Computes the MMD of every detection cloud against the library.
pub fn frame_mmds(frames: &[FrameData], lib: &TemplateLibrary, norm: CdNorm) -> Result<FrameMmds> {
    frames
        .par_iter()
        .map(|f| {
            f.dets
                .iter()
                .map(|d| d.cloud.as_ref().map(|c| mmd(c, lib, norm)).transpose())
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Matches every frame, pools the non-ignored detections in score order
/// and records precision plus the orientation and shape similarity sums.
pub fn sweep(
    frames: &[FrameData],
    mmds: Option<&FrameMmds>,
    class: &str,
    category: Difficulty,
    criterion: &MatchCriterion,
    table: &DifficultyTable,
) -> Result<Sweep> {
    let per_frame: Vec<(Vec<SweepEntry>, usize)> = frames
        .par_iter()
        .enumerate()
        .map(|(fi, f)| -> Result<_> {
            let roles = gt_roles(&f.gts, class, category, table);
            let valid = roles.iter().filter(|r| **r == GtRole::Valid).count();
            let dets: Vec<usize> = (0..f.dets.len()).filter(|&d| f.dets[d].class == class).collect();
            let subset: Vec<Detection> = dets.iter().map(|&d| f.dets[d].clone()).collect();
            let m = match_detections(&subset, &f.gts, &roles, criterion)?;
            let mut entries = Vec::new();
            for (si, &d) in dets.iter().enumerate() {
                let (tp, orientation) = match m.outcomes[si] {
                    DetOutcome::Ignored => continue,
                    DetOutcome::FalsePositive => (false, 0.0),
                    DetOutcome::TruePositive { gt, .. } => {
                        (true, orientation_similarity(f.dets[d].box3d.yaw(), f.gts[gt].box3d.yaw()))
                    }
                };
                let shape = mmds
                    .and_then(|m| m[fi][d])
                    .map(|v| mmd_similarity(v, tp));
                entries.push(SweepEntry {
                    score: f.dets[d].score,
                    frame: fi,
                    det: d,
                    tp,
                    orientation,
                    shape,
                });
            }
            Ok((entries, valid))
        })
        .collect::<Result<_>>()?;

    let valid_gts: usize = per_frame.iter().map(|(_, v)| v).sum();
    let mut entries: Vec<SweepEntry> = per_frame.into_iter().flat_map(|(e, _)| e).collect();
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.frame.cmp(&b.frame))
            .then(a.det.cmp(&b.det))
    });

    let mut out = Sweep {
        valid_gts,
        shape_complete: entries.iter().all(|e| e.shape.is_some()),
        ..Default::default()
    };
    if valid_gts == 0 {
        return Ok(out);
    }
    let (mut tp, mut orient, mut shape) = (0usize, 0.0f64, 0.0f64);
    for (k, e) in entries.iter().enumerate() {
        let n = (k + 1) as f64;
        tp += e.tp as usize;
        orient += e.orientation;
        shape += e.shape.unwrap_or(0.0);
        let recall = tp as f64 / valid_gts as f64;
        out.precision.push(RecallPoint { recall, value: tp as f64 / n });
        out.orientation.push(RecallPoint { recall, value: orient / n });
        out.shape.push(RecallPoint { recall, value: shape / n });
    }
    Ok(out)
}

/// Average orientation similarity under 2D matching at `threshold`.
pub fn aos(
    frames: &[FrameData],
    class: &str,
    category: Difficulty,
    threshold: f64,
    table: &DifficultyTable,
) -> Result<f64> {
    let c = MatchCriterion { kind: OverlapKind::Iou2d, threshold };
    Ok(sweep(frames, None, class, category, &c, table)?.aos())
}

/// Shape-similarity-weighted AP under 2D matching at `threshold`.
pub fn ap_mmd(
    frames: &[FrameData],
    mmds: &FrameMmds,
    class: &str,
    category: Difficulty,
    threshold: f64,
    table: &DifficultyTable,
) -> Result<f64> {
    for (fi, f) in frames.iter().enumerate() {
        if let Some(d) = (0..f.dets.len()).find(|&d| f.dets[d].class == class && mmds[fi][d].is_none()) {
            return Err(Error::MissingCloud(d));
        }
    }
    let c = MatchCriterion { kind: OverlapKind::Iou2d, threshold };
    sweep(frames, Some(mmds), class, category, &c, table)?.ap_mmd()
}

/// Mean MMD of one group of true positives.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdtpBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdtpReport {
    pub beta: f64,
    pub count: usize,
    pub overall: Option<f64>,
    pub bins: Vec<MmdtpBin>,
}

/// Mean MMD over detections whose 3D IoU with at least one object of the
/// class exceeds `beta`, overall and grouped by predicted depth into
/// half-open bins `(edges[i], edges[i + 1]]`.
pub fn mmdtp(frames: &[FrameData], mmds: &FrameMmds, class: &str, beta: f64, edges: &[f64]) -> MmdtpReport {
    let mut values: Vec<(f64, f64)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        for (d, det) in f.dets.iter().enumerate() {
            if det.class != class {
                continue;
            }
            let Some(m) = mmds[fi][d] else { continue };
            let tp = f
                .gts
                .iter()
                .filter(|g| g.class == class)
                .any(|g| iou_3d(&det.box3d, &g.box3d) > beta);
            if tp {
                values.push((det.box3d.center.z, m));
            }
        }
    }
    let mean = |vs: &[f64]| {
        if vs.is_empty() {
            None
        } else {
            Some(vs.iter().sum::<f64>() / vs.len() as f64)
        }
    };
    let all: Vec<f64> = values.iter().map(|v| v.1).collect();
    let bins = edges
        .windows(2)
        .map(|w| {
            let vs: Vec<f64> = values.iter().filter(|v| v.0 > w[0] && v.0 <= w[1]).map(|v| v.1).collect();
            MmdtpBin { lo: w[0], hi: w[1], count: vs.len(), mean: mean(&vs) }
        })
        .collect();
    MmdtpReport {
        beta,
        count: all.len(),
        overall: mean(&all),
        bins,
    }
}

/// Evaluation thresholds and options.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub class: String,
    pub iou_2d: f64,
    pub iou_bev: f64,
    pub iou_3d: f64,
    pub ap_mmd_iou: Vec<f64>,
    pub beta: f64,
    pub difficulty: DifficultyTable,
    pub depth_bins: Vec<f64>,
    pub template_points: usize,
    pub cd_norm: CdNorm,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            class: "Car".into(),
            iou_2d: 0.7,
            iou_bev: 0.7,
            iou_3d: 0.7,
            ap_mmd_iou: vec![0.5, 0.7],
            beta: 0.5,
            difficulty: DifficultyTable::default(),
            depth_bins: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            template_points: DEFAULT_TEMPLATE_POINTS,
            cd_norm: CdNorm::L2,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("`{key}`: invalid value `{}`", t.trim())))
        })
        .collect()
}

fn parse_three<T: FromStr + Copy>(key: &str, value: &str) -> Result<[T; 3]> {
    let v = parse_list::<T>(key, value)?;
    <[T; 3]>::try_from(v).map_err(|_| Error::Config(format!("`{key}` needs exactly 3 values (easy, moderate, hard)")))
}

fn fmt_list<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl EvalConfig {
    /// Keys accepted by [`EvalConfig::set`].
    pub const KEYS: [&'static str; 12] = [
        "class",
        "iou_2d",
        "iou_bev",
        "iou_3d",
        "ap_mmd_iou",
        "beta",
        "min_height",
        "max_occlusion",
        "max_truncation",
        "depth_bins",
        "template_points",
        "cd_norm",
    ];

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .and_then(|_| cfg.validate())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.root())))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("`{key}`: invalid number `{v}`")))
        };
        match key {
            "class" => self.class = value.to_string(),
            "iou_2d" => self.iou_2d = num(value)?,
            "iou_bev" => self.iou_bev = num(value)?,
            "iou_3d" => self.iou_3d = num(value)?,
            "ap_mmd_iou" => self.ap_mmd_iou = parse_list(key, value)?,
            "beta" => self.beta = num(value)?,
            "min_height" => self.difficulty.min_height = parse_three(key, value)?,
            "max_occlusion" => self.difficulty.max_occlusion = parse_three(key, value)?,
            "max_truncation" => self.difficulty.max_truncation = parse_three(key, value)?,
            "depth_bins" => self.depth_bins = parse_list(key, value)?,
            "template_points" => {
                self.template_points = value
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}`: invalid count `{value}`")))?
            }
            "cd_norm" => self.cd_norm = value.parse()?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` must lie in (0, 1), got {v}")))
            }
        };
        unit("iou_2d", self.iou_2d)?;
        unit("iou_bev", self.iou_bev)?;
        unit("iou_3d", self.iou_3d)?;
        unit("beta", self.beta)?;
        if self.ap_mmd_iou.is_empty() {
            return Err(Error::Config("`ap_mmd_iou` needs at least one threshold".into()));
        }
        for &t in &self.ap_mmd_iou {
            unit("ap_mmd_iou", t)?;
        }
        if self.depth_bins.len() < 2 || self.depth_bins.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("`depth_bins` must be at least two increasing edges".into()));
        }
        if self.template_points == 0 {
            return Err(Error::Config("`template_points` must be >= 1".into()));
        }
        if self.class.is_empty() || self.class.contains(char::is_whitespace) {
            return Err(Error::Config("`class` must be a single non-empty word".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` rendering, parseable by [`EvalConfig::parse`].
    pub fn to_text(&self) -> String {
        let d = &self.difficulty;
        let lines = [
            ("class", self.class.clone()),
            ("iou_2d", self.iou_2d.to_string()),
            ("iou_bev", self.iou_bev.to_string()),
            ("iou_3d", self.iou_3d.to_string()),
            ("ap_mmd_iou", fmt_list(&self.ap_mmd_iou)),
            ("beta", self.beta.to_string()),
            ("min_height", fmt_list(&d.min_height)),
            ("max_occlusion", fmt_list(&d.max_occlusion)),
            ("max_truncation", fmt_list(&d.max_truncation)),
            ("depth_bins", fmt_list(&self.depth_bins)),
            ("template_points", self.template_points.to_string()),
            ("cd_norm", self.cd_norm.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// AP-family scores for one difficulty category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryScores {
    pub difficulty: Difficulty,
    pub ap_2d: f64,
    pub ap_bev: f64,
    pub ap_3d: f64,
    pub aos: f64,
    /// `(2D IoU threshold, AP_2D at it, AP_MMD at it)`; AP_MMD is absent
    /// when no shape clouds were supplied.
    pub shape: Vec<(f64, f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub frames: usize,
    pub categories: Vec<CategoryScores>,
    /// Absent when no detection carries a cloud.
    pub mmdtp: Option<MmdtpReport>,
}

/// Full evaluation over frames in index order. When `lib` is given every
/// detection of the evaluated class must carry a cloud.
pub fn evaluate(frames: &[FrameData], lib: Option<&TemplateLibrary>, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mmds = match lib {
        Some(lib) => Some(frame_mmds(frames, lib, cfg.cd_norm)?),
        None => None,
    };
    if let Some(m) = &mmds {
        for (fi, f) in frames.iter().enumerate() {
            if let Some(d) = (0..f.dets.len()).find(|&d| f.dets[d].class == cfg.class && m[fi][d].is_none()) {
                return Err(Error::MissingCloud(d));
            }
        }
    }
    let mut categories = Vec::with_capacity(3);
    for category in Difficulty::CATEGORIES {
        let run = |kind, threshold| {
            sweep(
                frames,
                mmds.as_ref(),
                &cfg.class,
                category,
                &MatchCriterion { kind, threshold },
                &cfg.difficulty,
            )
        };
        let s2d = run(OverlapKind::Iou2d, cfg.iou_2d)?;
        let sbev = run(OverlapKind::IouBev, cfg.iou_bev)?;
        let s3d = run(OverlapKind::Iou3d, cfg.iou_3d)?;
        let mut shape = Vec::new();
        for &t in &cfg.ap_mmd_iou {
            let s = run(OverlapKind::Iou2d, t)?;
            let apm = if mmds.is_some() { Some(s.ap_mmd()?) } else { None };
            shape.push((t, s.ap(), apm));
        }
        categories.push(CategoryScores {
            difficulty: category,
            ap_2d: s2d.ap(),
            ap_bev: sbev.ap(),
            ap_3d: s3d.ap(),
            aos: s2d.aos(),
            shape,
        });
    }
    let mmdtp = mmds
        .as_ref()
        .map(|m| mmdtp(frames, m, &cfg.class, cfg.beta, &cfg.depth_bins));
    Ok(EvalReport {
        config: cfg.clone(),
        frames: frames.len(),
        categories,
        mmdtp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Frame;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cloud(pts: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(Frame::Object, pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect())
    }

    fn bx(x: f64, y: f64, z: f64, h: f64, w: f64, l: f64, t: f64) -> Box3D {
        Box3D::new(Point3::new(x, y, z), h, w, l, t).unwrap()
    }

    fn brute_chamfer(p: &[Point3], g: &[Point3]) -> f64 {
        let one = |a: &[Point3], b: &[Point3]| {
            a.iter()
                .map(|x| b.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / a.len() as f64
        };
        one(p, g) + one(g, p)
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2), rng.gen_range(-0.3..0.3)))
            .collect()
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[(0.1, 0.2, 0.3), (0.0, -1.0, 2.0)]);
        assert_eq!(chamfer(&a, &a, CdNorm::L2).unwrap(), 0.0);
        let p = cloud(&[(0.0, 0.0, 0.0)]);
        let g = cloud(&[(1.0, 0.0, 0.0)]);
        assert_eq!(chamfer(&p, &g, CdNorm::L2).unwrap(), 2.0);
        let g2 = cloud(&[(2.0, 0.0, 0.0)]);
        assert_eq!(chamfer(&p, &g2, CdNorm::SquaredL2).unwrap(), 8.0);
        assert!(matches!(chamfer(&p, &cloud(&[]), CdNorm::L2), Err(Error::EmptyCloud)));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_cloud(&mut rng, 100);
        let b = random_cloud(&mut rng, 100);
        let fast = chamfer_points(&a, &b, CdNorm::L2).unwrap();
        assert_abs_diff_eq!(fast, brute_chamfer(&a, &b), epsilon = 1e-12);
    }

    #[test]
    fn chamfer_skips_padding() {
        let p = PointCloud::with_padding(
            Frame::Object,
            vec![Point3::new(1.0, 0.0, 0.0), Point3::origin()],
            vec![false, true],
        );
        let g = cloud(&[(1.0, 0.0, 0.0)]);
        assert_eq!(chamfer(&p, &g, CdNorm::L2).unwrap(), 0.0);
    }

    #[test]
    fn mmd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let templates: Vec<(String, Vec<Point3>)> =
            (0..5).map(|i| (format!("t{i}"), random_cloud(&mut rng, 40))).collect();
        let lib = TemplateLibrary::new(templates.clone()).unwrap();
        let exact = PointCloud::new(Frame::Object, templates[3].1.clone());
        assert_eq!(mmd(&exact, &lib, CdNorm::L2).unwrap(), 0.0);

        let q = random_cloud(&mut rng, 50);
        let oracle = templates.iter().map(|(_, t)| brute_chamfer(&q, t)).fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(lib.mmd(&q, CdNorm::L2).unwrap(), oracle, epsilon = 1e-12);

        let single = TemplateLibrary::new(vec![templates[0].clone()]).unwrap();
        assert_abs_diff_eq!(
            single.mmd(&q, CdNorm::L2).unwrap(),
            chamfer_points(&q, &templates[0].1, CdNorm::L2).unwrap(),
            epsilon = 0.0
        );
        assert!(matches!(TemplateLibrary::new(vec![]), Err(Error::EmptyLibrary)));
    }

    #[test]
    fn iou_2d_examples() {
        let a = Rect2D::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou_2d(&a, &a).unwrap(), 1.0);
        assert_eq!(iou_2d(&a, &Rect2D::new(2.0, 2.0, 3.0, 3.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(iou_2d(&a, &Rect2D::new(0.5, 0.0, 1.5, 1.0)).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(iou_2d(&a, &Rect2D::new(1.0, 1.0, 1.0, 2.0)), Err(Error::DegenerateBox(_))));
    }

    #[test]
    fn iou_bev_examples() {
        let a = bx(1.0, 0.0, 10.0, 1.5, 1.6, 4.0, 0.4);
        assert_abs_diff_eq!(iou_bev(&a, &a), 1.0, epsilon = 1e-12);
        let b = bx(20.0, 0.0, 10.0, 1.5, 1.6, 4.0, 0.4);
        assert_eq!(iou_bev(&a, &b), 0.0);

        let s = bx(0.0, 0.0, 5.0, 1.0, 1.0, 1.0, 0.0);
        let r = bx(0.0, 0.0, 5.0, 1.0, 1.0, 1.0, PI / 4.0);
        let octagon = 2.0 * (2f64.sqrt() - 1.0);
        assert_abs_diff_eq!(bev_intersection_area(&s, &r), octagon, epsilon = 1e-12);
        assert_abs_diff_eq!(iou_bev(&s, &r), octagon / (2.0 - octagon), epsilon = 1e-12);
    }

    #[test]
    fn iou_3d_examples() {
        let a = bx(0.0, 0.0, 5.0, 1.0, 1.0, 1.0, 0.0);
        assert_abs_diff_eq!(iou_3d(&a, &a), 1.0, epsilon = 1e-12);
        let stacked = bx(0.0, 1.0, 5.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(iou_3d(&a, &stacked), 0.0);
        let shifted = bx(0.5, 0.0, 5.0, 1.0, 1.0, 1.0, 0.0);
        assert_abs_diff_eq!(iou_3d(&a, &shifted), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn clip_handles_containment() {
        let outer = bx(0.0, 0.0, 5.0, 1.0, 4.0, 4.0, 0.3);
        let inner = bx(0.1, 0.0, 5.1, 1.0, 1.0, 1.0, -0.9);
        assert_abs_diff_eq!(bev_intersection_area(&outer, &inner), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(iou_bev(&outer, &inner), 1.0 / 16.0, epsilon = 1e-12);
    }

    fn gt(h: f64, occ: u8, trunc: f64) -> GroundTruthObject {
        GroundTruthObject {
            class: "Car".into(),
            box3d: bx(0.0, 0.0, 10.0, 1.5, 1.6, 4.0, 0.0),
            bbox: Rect2D::new(100.0, 100.0, 200.0, 100.0 + h),
            truncation: trunc,
            occlusion: occ,
        }
    }

    #[test]
    fn difficulty_examples() {
        let t = DifficultyTable::default();
        assert_eq!(assign_difficulty(&gt(50.0, 0, 0.0), &t), Difficulty::Easy);
        assert_eq!(assign_difficulty(&gt(30.0, 1, 0.2), &t), Difficulty::Moderate);
        assert_eq!(assign_difficulty(&gt(20.0, 0, 0.0), &t), Difficulty::Ignored);
        assert_eq!(assign_difficulty(&gt(30.0, 2, 0.45), &t), Difficulty::Hard);
        assert_eq!(assign_difficulty(&gt(60.0, 3, 0.0), &t), Difficulty::Ignored);
        for d in Difficulty::CATEGORIES {
            assert!(!Difficulty::Ignored.counts_in(d));
        }
        assert!(Difficulty::Easy.counts_in(Difficulty::Hard));
        assert!(!Difficulty::Hard.counts_in(Difficulty::Moderate));
    }

    fn det(b: Box3D, rect: Rect2D, score: f64) -> Detection {
        Detection { class: "Car".into(), box3d: b, bbox: rect, score, cloud: None }
    }

    #[test]
    fn matching_examples() {
        let g = gt(50.0, 0, 0.0);
        let crit = MatchCriterion { kind: OverlapKind::Iou2d, threshold: 0.7 };
        let roles = vec![GtRole::Valid];
        let one = [det(g.box3d, g.bbox, 0.9)];
        let m = match_detections(&one, std::slice::from_ref(&g), &roles, &crit).unwrap();
        assert!(m.is_tp(0));
        assert!(m.gt_matched[0]);

        let two = [det(g.box3d, g.bbox, 0.4), det(g.box3d, g.bbox, 0.8)];
        let m = match_detections(&two, std::slice::from_ref(&g), &roles, &crit).unwrap();
        assert_eq!(m.outcomes[0], DetOutcome::FalsePositive);
        assert!(m.is_tp(1));

        let ignored = gt(20.0, 0, 0.0);
        let frames = vec![FrameData { gts: vec![ignored.clone()], dets: vec![det(ignored.box3d, ignored.bbox, 0.9)] }];
        let roles = gt_roles(&frames[0].gts, "Car", Difficulty::Hard, &DifficultyTable::default());
        assert_eq!(roles, vec![GtRole::Ignored]);
        let m = match_detections(&frames[0].dets, &frames[0].gts, &roles, &crit).unwrap();
        assert_eq!(m.outcomes[0], DetOutcome::Ignored);
        let s = sweep(&frames, None, "Car", Difficulty::Hard, &crit, &DifficultyTable::default()).unwrap();
        assert_eq!(s.valid_gts, 0);
        assert!(s.precision.is_empty());
    }

    #[test]
    fn dont_care_absorbs_detections() {
        let mut dc = gt(50.0, 0, 0.0);
        dc.class = "DontCare".into();
        dc.bbox = Rect2D::new(0.0, 0.0, 100.0, 100.0);
        let d = det(bx(0.0, 0.0, 10.0, 1.5, 1.6, 4.0, 0.0), Rect2D::new(10.0, 10.0, 50.0, 50.0), 0.5);
        let crit = MatchCriterion { kind: OverlapKind::Iou3d, threshold: 0.7 };
        let m = match_detections(&[d], &[dc], &[GtRole::DontCare], &crit).unwrap();
        assert_eq!(m.outcomes[0], DetOutcome::Ignored);
    }

    #[test]
    fn ap_examples() {
        let perfect: Vec<RecallPoint> = (1..=10).map(|k| RecallPoint { recall: k as f64 / 10.0, value: 1.0 }).collect();
        assert_eq!(ap_11(&perfect), 1.0);
        assert_eq!(ap_11(&[]), 0.0);
        let mut pr: Vec<RecallPoint> = (1..=5).map(|k| RecallPoint { recall: k as f64 / 10.0, value: 1.0 }).collect();
        pr.push(RecallPoint { recall: 0.5, value: 0.0 });
        assert_abs_diff_eq!(ap_11(&pr), 6.0 / 11.0, epsilon = 1e-15);
    }

    #[test]
    fn delta_mmd_examples() {
        assert_eq!(delta_mmd(0.0), 1.0);
        assert_eq!(delta_mmd(0.05), 0.0);
        assert_abs_diff_eq!(delta_mmd(0.025), 0.5, epsilon = 1e-15);
        assert_eq!(mmd_similarity(0.06, true), 0.0);
        assert_eq!(mmd_similarity(0.0, false), 0.0);
    }

    /// Frame with `n` easy cars side by side and one exact detection each.
    fn perfect_frame(n: usize, yaw_err: f64) -> FrameData {
        let mut f = FrameData::default();
        for i in 0..n {
            let mut g = gt(60.0, 0, 0.0);
            g.box3d = bx(5.0 * i as f64, 0.0, 15.0, 1.5, 1.6, 4.0, 0.0);
            g.bbox = Rect2D::new(200.0 * i as f64, 100.0, 200.0 * i as f64 + 150.0, 160.0);
            let b = bx(5.0 * i as f64, 0.0, 15.0, 1.5, 1.6, 4.0, yaw_err);
            f.dets.push(det(b, g.bbox, 0.9 - 0.01 * i as f64));
            f.gts.push(g);
        }
        f
    }

    #[test]
    fn aos_examples() {
        let table = DifficultyTable::default();
        let frames = vec![perfect_frame(3, 0.0)];
        let c = MatchCriterion { kind: OverlapKind::Iou2d, threshold: 0.7 };
        let s = sweep(&frames, None, "Car", Difficulty::Moderate, &c, &table).unwrap();
        assert_eq!(s.aos(), s.ap());
        assert_eq!(s.ap(), 1.0);
        let flipped = vec![perfect_frame(3, PI)];
        assert_abs_diff_eq!(aos(&flipped, "Car", Difficulty::Moderate, 0.7, &table).unwrap(), 0.0, epsilon = 1e-12);

        // Mixed: yaw errors 0, pi/2 on two TPs, plus one FP ranked last.
        let mut f = perfect_frame(2, 0.0);
        f.dets[1].box3d = bx(5.0, 0.0, 15.0, 1.5, 1.6, 4.0, PI / 2.0);
        f.dets.push(det(bx(40.0, 0.0, 15.0, 1.5, 1.6, 4.0, 0.0), Rect2D::new(900.0, 100.0, 950.0, 160.0), 0.1));
        // Sweep: k=1 recall .5 s=1; k=2 recall 1 s=(1+.5)/2=.75; k=3 recall 1 s=1.5/3=.5.
        // Anchors 0..0.5 -> max(1, .75, .5) = 1 (6 anchors); 0.6..1 -> .75 (5 anchors).
        let expected = (6.0 * 1.0 + 5.0 * 0.75) / 11.0;
        assert_abs_diff_eq!(aos(&[f], "Car", Difficulty::Moderate, 0.7, &table).unwrap(), expected, epsilon = 1e-12);
    }

    fn with_clouds(mut f: FrameData, c: &PointCloud) -> FrameData {
        for d in &mut f.dets {
            d.cloud = Some(c.clone());
        }
        f
    }

    #[test]
    fn ap_mmd_and_mmdtp_examples() {
        let table = DifficultyTable::default();
        let t = cloud(&[(0.0, 0.0, 0.0), (0.5, 0.0, 0.0), (0.0, 0.1, 0.2)]);
        let lib = TemplateLibrary::new(vec![("t".into(), t.real_vec())]).unwrap();
        let frames = vec![with_clouds(perfect_frame(3, 0.0), &t)];
        let mmds = frame_mmds(&frames, &lib, CdNorm::L2).unwrap();
        let ap = aos(&frames, "Car", Difficulty::Easy, 0.7, &table).unwrap();
        assert_eq!(ap_mmd(&frames, &mmds, "Car", Difficulty::Easy, 0.7, &table).unwrap(), ap);
        let r = mmdtp(&frames, &mmds, "Car", 0.5, &[0.0, 10.0, 20.0]);
        assert_eq!(r.overall, Some(0.0));
        assert_eq!(r.bins[0].mean, None);
        assert_eq!(r.bins[1].count, 3);

        let far = cloud(&[(3.0, 0.0, 0.0)]);
        let bad = vec![with_clouds(perfect_frame(3, 0.0), &far)];
        let mmds = frame_mmds(&bad, &lib, CdNorm::L2).unwrap();
        assert_eq!(ap_mmd(&bad, &mmds, "Car", Difficulty::Easy, 0.7, &table).unwrap(), 0.0);

        let missing = vec![perfect_frame(1, 0.0)];
        let mmds = frame_mmds(&missing, &lib, CdNorm::L2).unwrap();
        assert!(matches!(
            ap_mmd(&missing, &mmds, "Car", Difficulty::Easy, 0.7, &table),
            Err(Error::MissingCloud(0))
        ));
    }

    #[test]
    fn mmdtp_mean_of_two() {
        let frames = vec![perfect_frame(2, 0.0)];
        let mmds: FrameMmds = vec![vec![Some(0.01), Some(0.03)]];
        let r = mmdtp(&frames, &mmds, "Car", 0.5, &[0.0, 10.0, 20.0]);
        assert_abs_diff_eq!(r.overall.unwrap(), 0.02, epsilon = 1e-15);
        assert_eq!(r.count, 2);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let cfg = EvalConfig::default();
        assert_eq!(EvalConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let c = EvalConfig::parse("beta = 0.25 # tighter\nap_mmd_iou = 0.7\n\nmin_height = 30,20,20\n").unwrap();
        assert_eq!(c.beta, 0.25);
        assert_eq!(c.ap_mmd_iou, vec![0.7]);
        assert_eq!(c.difficulty.min_height, [30.0, 20.0, 20.0]);
        for bad in ["beta = 1.5", "nope = 1", "beta", "min_height = 1,2", "depth_bins = 10,5", "cd_norm = l1"] {
            let err = EvalConfig::parse(bad).unwrap_err();
            assert!(err.is_config(), "{bad}: {err}");
        }
    }

    fn random_scenario(rng: &mut ChaCha8Rng) -> (Vec<FrameData>, FrameMmds) {
        let mut frame = FrameData::default();
        let mut mmds = Vec::new();
        let n_gt = rng.gen_range(1..6);
        for i in 0..n_gt {
            let mut g = gt(rng.gen_range(20.0..80.0), rng.gen_range(0..3), rng.gen_range(0.0..0.4));
            g.bbox.left = 150.0 * i as f64;
            g.bbox.right = g.bbox.left + 100.0;
            g.box3d = bx(4.0 * i as f64, 0.0, 15.0, 1.5, 1.6, 4.0, rng.gen_range(-PI..PI));
            frame.gts.push(g);
        }
        for _ in 0..rng.gen_range(0..10) {
            let i = rng.gen_range(0..n_gt + 1) as f64;
            let jitter = rng.gen_range(-20.0..20.0);
            let rect = Rect2D::new(150.0 * i + jitter, 100.0, 150.0 * i + jitter + 100.0, 160.0);
            frame.dets.push(det(
                bx(4.0 * i, 0.0, 15.0, 1.5, 1.6, 4.0, rng.gen_range(-PI..PI)),
                rect,
                rng.gen_range(0.0..1.0),
            ));
            mmds.push(Some(rng.gen_range(0.0..0.08)));
        }
        (vec![frame], vec![mmds])
    }

    #[test]
    fn similarity_metrics_bounded_by_ap() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let table = DifficultyTable::default();
        let c = MatchCriterion { kind: OverlapKind::Iou2d, threshold: 0.7 };
        for _ in 0..200 {
            let (frames, mmds) = random_scenario(&mut rng);
            for d in Difficulty::CATEGORIES {
                let s = sweep(&frames, Some(&mmds), "Car", d, &c, &table).unwrap();
                assert!(s.aos() <= s.ap() + 1e-15);
                assert!(s.ap_mmd().unwrap() <= s.ap() + 1e-15);
            }
        }
    }

    #[test]
    fn mmdtp_ignores_order_and_false_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (frames, mmds) = random_scenario(&mut rng);
            let base = mmdtp(&frames, &mmds, "Car", 0.5, &[0.0, 10.0, 20.0, 30.0]);
            let mut rev = frames.clone();
            rev[0].dets.reverse();
            let mut rev_m = mmds.clone();
            rev_m[0].reverse();
            let r = mmdtp(&rev, &rev_m, "Car", 0.5, &[0.0, 10.0, 20.0, 30.0]);
            assert_eq!(base.count, r.count);
            match (base.overall, r.overall) {
                (Some(a), Some(b)) => assert_abs_diff_eq!(a, b, epsilon = 1e-15),
                (a, b) => assert_eq!(a, b),
            }
            let mut fp = frames.clone();
            fp[0].dets.push(det(bx(-50.0, 0.0, 15.0, 1.5, 1.6, 4.0, 0.0), Rect2D::new(0.0, 0.0, 5.0, 5.0), 2.0));
            let mut fp_m = mmds.clone();
            fp_m[0].push(Some(0.0));
            assert_eq!(mmdtp(&fp, &fp_m, "Car", 0.5, &[0.0, 10.0, 20.0, 30.0]), base);
        }
    }

    #[test]
    fn outranking_false_positive_lowers_ap_mmd() {
        let table = DifficultyTable::default();
        let t = cloud(&[(0.0, 0.0, 0.0), (0.5, 0.0, 0.0)]);
        let lib = TemplateLibrary::new(vec![("t".into(), t.real_vec())]).unwrap();
        let frames = vec![with_clouds(perfect_frame(2, 0.0), &t)];
        let mmds = frame_mmds(&frames, &lib, CdNorm::L2).unwrap();
        let before = ap_mmd(&frames, &mmds, "Car", Difficulty::Easy, 0.7, &table).unwrap();
        let mut fp = frames.clone();
        let mut d = det(bx(-50.0, 0.0, 15.0, 1.5, 1.6, 4.0, 0.0), Rect2D::new(900.0, 0.0, 950.0, 50.0), 5.0);
        d.cloud = Some(t.clone());
        fp[0].dets.push(d);
        let mmds = frame_mmds(&fp, &lib, CdNorm::L2).unwrap();
        let after = ap_mmd(&fp, &mmds, "Car", Difficulty::Easy, 0.7, &table).unwrap();
        assert!(after < before);
        let r1 = mmdtp(&frames, &frame_mmds(&frames, &lib, CdNorm::L2).unwrap(), "Car", 0.5, &[0.0, 60.0]);
        let r2 = mmdtp(&fp, &mmds, "Car", 0.5, &[0.0, 60.0]);
        assert_eq!(r1, r2);
    }

    #[test]
    fn difficulty_sets_nest() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let table = DifficultyTable::default();
        for _ in 0..500 {
            let g = gt(rng.gen_range(0.0..100.0), rng.gen_range(0..4), rng.gen_range(0.0..1.0));
            let d = assign_difficulty(&g, &table);
            let e = d.counts_in(Difficulty::Easy);
            let m = d.counts_in(Difficulty::Moderate);
            let h = d.counts_in(Difficulty::Hard);
            assert!(!e || m);
            assert!(!m || h);
        }
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (-3.0..3.0f64, -1.0..1.0f64, 5.0..12.0f64, 0.5..2.0f64, 0.5..3.0f64, 0.5..5.0f64, -PI..PI)
            .prop_map(|(x, y, z, h, w, l, t)| bx(x, y, z, h, w, l, t))
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded_rigid_invariant(a in arb_box(), b in arb_box(), t in (-5.0..5.0f64, -1.0..1.0f64), rot in -PI..PI) {
            let ab = iou_bev(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - iou_bev(&b, &a)).abs() < 1e-12);
            let a3 = iou_3d(&a, &b);
            prop_assert!((0.0..=1.0).contains(&a3));
            prop_assert!((a3 - iou_3d(&b, &a)).abs() < 1e-12);
            // Joint rigid motion on the ground plane: rotate both centers about
            // the y axis by `rot`, add `rot` to both headings, then translate.
            let r = crate::geometry::yaw_rotation(rot);
            let mv = |x: &Box3D| {
                let c = r * x.center.coords + nalgebra::Vector3::new(t.0, t.1, 0.0);
                bx(c.x, c.y, c.z, x.h(), x.w(), x.l(), x.yaw() + rot)
            };
            prop_assert!((iou_bev(&mv(&a), &mv(&b)) - ab).abs() < 1e-9);
            prop_assert!((iou_3d(&mv(&a), &mv(&b)) - a3).abs() < 1e-9);
        }

        #[test]
        fn chamfer_symmetric_nonnegative(n in 1usize..60, m in 1usize..60, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(&mut rng, n);
            let b = random_cloud(&mut rng, m);
            let ab = chamfer_points(&a, &b, CdNorm::L2).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - chamfer_points(&b, &a, CdNorm::L2).unwrap()).abs() < 1e-12);
            prop_assert_eq!(chamfer_points(&a, &a, CdNorm::L2).unwrap(), 0.0);
        }
    }
}
