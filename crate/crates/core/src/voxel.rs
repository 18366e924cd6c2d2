//! Global scene voxel grid: voxel enumeration, projection into the
//! (downsampled) feature maps, bilinear/trilinear feature warping and the
//! height-averaged bird's-eye-view reduction.
//!
//! Samples that fall outside a feature grid see zero padding: every
//! out-of-range interpolation neighbour contributes zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Pixel, Point3, StereoRig};

/// Regular lattice of voxels in camera coordinates, indexed 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridSpec {
    counts: [usize; 3],
    start: [f64; 3],
    resolution: [f64; 3],
}

impl Default for VoxelGridSpec {
    /// 304 x 20 x 288 voxels of 0.2 m starting at (-30, -1, 2) m.
    fn default() -> Self {
        Self {
            counts: [304, 20, 288],
            start: [-30.0, -1.0, 2.0],
            resolution: [0.2, 0.2, 0.2],
        }
    }
}

impl VoxelGridSpec {
    pub fn new(counts: [usize; 3], start: [f64; 3], resolution: [f64; 3]) -> Result<Self> {
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidGrid(format!("voxel counts must be >= 1, got {counts:?}")));
        }
        if resolution.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "voxel resolution must be positive, got {resolution:?}"
            )));
        }
        if start.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidGrid("grid start must be finite".into()));
        }
        Ok(Self { counts, start, resolution })
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn start(&self) -> [f64; 3] {
        self.start
    }

    pub fn resolution(&self) -> [f64; 3] {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Center of voxel `(i, j, k)`, 1-based: `start + (index - 1) * resolution`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Result<Point3> {
        let [nx, ny, nz] = self.counts;
        if i == 0 || j == 0 || k == 0 || i > nx || j > ny || k > nz {
            return Err(Error::IndexOutOfGrid { i, j, k, nx, ny, nz });
        }
        Ok(self.center_unchecked(i - 1, j - 1, k - 1))
    }

    fn center_unchecked(&self, i0: usize, j0: usize, k0: usize) -> Point3 {
        Point3::new(
            self.start[0] + i0 as f64 * self.resolution[0],
            self.start[1] + j0 as f64 * self.resolution[1],
            self.start[2] + k0 as f64 * self.resolution[2],
        )
    }

    /// All voxel centers in `(i, j, k)` row-major order.
    pub fn centers(&self) -> impl Iterator<Item = Point3> + '_ {
        let [nx, ny, nz] = self.counts;
        (0..nx).flat_map(move |i| {
            (0..ny).flat_map(move |j| (0..nz).map(move |k| self.center_unchecked(i, j, k)))
        })
    }
}

fn check_values(dims: &[usize], data: &[f32]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidGrid(format!("grid dimensions must be positive, got {dims:?}")));
    }
    let expected: usize = dims.iter().product();
    if data.len() != expected {
        return Err(Error::InvalidGrid(format!(
            "expected {expected} values for dims {dims:?}, got {}",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidGrid("grid values must be finite".into()));
    }
    Ok(())
}

/// Dense `height x width x channels` feature map (row-major, channels last).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid2D {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureGrid2D {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_values(&[height, width, channels], &data)?;
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, value: &[f32]) -> Result<Self> {
        let data = value.repeat(height * width);
        Self::new(height, width, value.len(), data)
    }

    /// Builds from a tensor with dims `[height, width, channels]`.
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        match tensor.dims[..] {
            [h, w, c] => Self::new(h, w, c, tensor.data),
            _ => Err(Error::InvalidGrid(format!(
                "2D feature grid needs 3 dims (height width channels), got {:?}",
                tensor.dims
            ))),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn at(&self, row: usize, col: usize) -> &[f32] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    /// Bilinear sample at column `px.u`, row `px.v` with zero padding.
    pub fn bilinear_sample(&self, px: Pixel) -> Vec<f32> {
        let mut out = vec![0.0f32; self.channels];
        self.bilinear_into(px.u, px.v, &mut out);
        out
    }

    fn bilinear_into(&self, u: f64, v: f64, out: &mut [f32]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if !(u.is_finite() && v.is_finite()) {
            return;
        }
        let u0 = u.floor();
        let v0 = v.floor();
        let fu = u - u0;
        let fv = v - v0;
        let mut acc = vec![0.0f64; self.channels];
        for (dv, wv) in [(0i64, 1.0 - fv), (1, fv)] {
            for (du, wu) in [(0i64, 1.0 - fu), (1, fu)] {
                let w = wu * wv;
                if w == 0.0 {
                    continue;
                }
                let (r, c) = (v0 as i64 + dv, u0 as i64 + du);
                if r < 0 || c < 0 || r >= self.height as i64 || c >= self.width as i64 {
                    continue;
                }
                for (a, &x) in acc.iter_mut().zip(self.at(r as usize, c as usize)) {
                    *a += w * x as f64;
                }
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = a as f32;
        }
    }
}

/// Dense `levels x height x width x channels` cost feature volume, the
/// first axis indexing disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid3D {
    levels: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureGrid3D {
    pub fn new(levels: usize, height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_values(&[levels, height, width, channels], &data)?;
        Ok(Self { levels, height, width, channels, data })
    }

    pub fn filled(levels: usize, height: usize, width: usize, value: &[f32]) -> Result<Self> {
        let data = value.repeat(levels * height * width);
        Self::new(levels, height, width, value.len(), data)
    }

    /// Builds from a tensor with dims `[levels, height, width, channels]`.
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        match tensor.dims[..] {
            [d, h, w, c] => Self::new(d, h, w, c, tensor.data),
            _ => Err(Error::InvalidGrid(format!(
                "3D feature grid needs 4 dims (levels height width channels), got {:?}",
                tensor.dims
            ))),
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn at(&self, level: usize, row: usize, col: usize) -> &[f32] {
        let o = ((level * self.height + row) * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    /// Trilinear sample at continuous `(u, v, disparity)` with zero padding.
    pub fn trilinear_sample(&self, index: CostIndex) -> Vec<f32> {
        let mut out = vec![0.0f32; self.channels];
        self.trilinear_into(index, &mut out);
        out
    }

    fn trilinear_into(&self, index: CostIndex, out: &mut [f32]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let CostIndex { u, v, d } = index;
        if !(u.is_finite() && v.is_finite() && d.is_finite()) {
            return;
        }
        let (u0, v0, d0) = (u.floor(), v.floor(), d.floor());
        let (fu, fv, fd) = (u - u0, v - v0, d - d0);
        let mut acc = vec![0.0f64; self.channels];
        for (dd, wd) in [(0i64, 1.0 - fd), (1, fd)] {
            for (dv, wv) in [(0i64, 1.0 - fv), (1, fv)] {
                for (du, wu) in [(0i64, 1.0 - fu), (1, fu)] {
                    let w = wd * wv * wu;
                    if w == 0.0 {
                        continue;
                    }
                    let (l, r, c) = (d0 as i64 + dd, v0 as i64 + dv, u0 as i64 + du);
                    if l < 0
                        || r < 0
                        || c < 0
                        || l >= self.levels as i64
                        || r >= self.height as i64
                        || c >= self.width as i64
                    {
                        continue;
                    }
                    for (a, &x) in acc.iter_mut().zip(self.at(l as usize, r as usize, c as usize)) {
                        *a += w * x as f64;
                    }
                }
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = a as f32;
        }
    }
}

/// Continuous index into a downsampled cost volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostIndex {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

/// Maps a camera-frame point to its spatial and disparity index in feature
/// maps downsampled by `downsample` (4 for quarter resolution).
pub fn voxel_to_cost_index(p: &Point3, rig: &StereoRig, downsample: usize) -> Result<CostIndex> {
    if downsample == 0 {
        return Err(Error::InvalidGrid("downsample factor must be >= 1".into()));
    }
    let px = rig.left().project(p)?;
    let disparity = rig.depth_to_disparity(p.z)?;
    let s = downsample as f64;
    Ok(CostIndex {
        u: px.u / s,
        v: px.v / s,
        d: disparity / s,
    })
}

/// Per-voxel features laid out as `(i, j, k, channel)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelFeatureVolume {
    counts: [usize; 3],
    channels: usize,
    data: Vec<f32>,
}

impl VoxelFeatureVolume {
    pub fn new(counts: [usize; 3], channels: usize, data: Vec<f32>) -> Result<Self> {
        check_values(&[counts[0], counts[1], counts[2], channels], &data)?;
        Ok(Self { counts, channels, data })
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector for 0-based voxel `(i, j, k)`.
    pub fn at(&self, i: usize, j: usize, k: usize) -> &[f32] {
        let [_, ny, nz] = self.counts;
        let o = ((i * ny + j) * nz + k) * self.channels;
        &self.data[o..o + self.channels]
    }
}

/// Gathers `cost ⊕ semantic` for every voxel: the cost volume is sampled
/// trilinearly at the voxel's `(u, v, disparity)` index and the semantic map
/// bilinearly at `(u, v)`. Voxels behind the camera get zeros.
pub fn aggregate_features(
    spec: &VoxelGridSpec,
    rig: &StereoRig,
    semantic: &FeatureGrid2D,
    cost: &FeatureGrid3D,
    downsample: usize,
) -> Result<VoxelFeatureVolume> {
    if downsample == 0 {
        return Err(Error::InvalidGrid("downsample factor must be >= 1".into()));
    }
    let cc = cost.channels();
    let channels = cc + semantic.channels();
    let [_, ny, nz] = spec.counts();
    let mut data = vec![0.0f32; spec.len() * channels];
    data.par_chunks_mut(channels).enumerate().for_each(|(n, out)| {
        let k = n % nz;
        let j = (n / nz) % ny;
        let i = n / (nz * ny);
        let p = spec.center_unchecked(i, j, k);
        match voxel_to_cost_index(&p, rig, downsample) {
            Ok(idx) => {
                let (c_out, s_out) = out.split_at_mut(cc);
                cost.trilinear_into(idx, c_out);
                semantic.bilinear_into(idx.u, idx.v, s_out);
            }
            Err(_) => out.iter_mut().for_each(|o| *o = 0.0),
        }
    });
    VoxelFeatureVolume::new(spec.counts(), channels, data)
}

/// `N_x x N_z x channels` bird's-eye-view map.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub nx: usize,
    pub nz: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl BevGrid {
    pub fn at(&self, i: usize, k: usize) -> &[f32] {
        let o = (i * self.nz + k) * self.channels;
        &self.data[o..o + self.channels]
    }
}

/// Mean over the height (`j`) axis.
pub fn bev_reduce(vol: &VoxelFeatureVolume) -> BevGrid {
    let [nx, ny, nz] = vol.counts();
    let c = vol.channels();
    let mut data = vec![0.0f32; nx * nz * c];
    data.par_chunks_mut(nz * c).enumerate().for_each(|(i, row)| {
        let mut acc = vec![0.0f64; nz * c];
        for j in 0..ny {
            for k in 0..nz {
                for (ch, &x) in vol.at(i, j, k).iter().enumerate() {
                    acc[k * c + ch] += x as f64;
                }
            }
        }
        for (o, a) in row.iter_mut().zip(acc) {
            *o = (a / ny as f64) as f32;
        }
    });
    BevGrid { nx, nz, channels: c, data }
}

/// Flat binary tensor: an ASCII header line `dims: d1 d2 ... dk\n` followed
/// by the little-endian `f32` payload in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::MalformedData { format: "tensor", reason };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8".into()))?;
        let rest = header
            .strip_prefix("dims:")
            .ok_or_else(|| bad(format!("header must start with `dims:`, got `{header}`")))?;
        let dims = rest
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad(format!("invalid dimension `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(bad(format!("dimensions must be non-empty and positive, got {dims:?}")));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dimension product overflows".into()))?;
        let payload = &bytes[nl + 1..];
        if payload.len() != count * 4 {
            return Err(bad(format!(
                "expected {} payload bytes for dims {dims:?}, got {}",
                count * 4,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let mut out = format!("dims: {}\n", dims.join(" ")).into_bytes();
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}
